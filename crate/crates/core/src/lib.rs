//! Numerical laboratory for R-bounds, Rademacher maximal functions and
//! vector-valued martingales on finite atomic measure spaces.

// `!(x > 0.0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Atom and coordinate loops index several parallel arrays.
#![allow(clippy::needless_range_loop)]

pub mod concave;
pub mod error;
pub mod filtration;
pub mod linalg;
pub mod martingale;
pub mod maximal;
pub mod optimize;
pub mod rademacher;
pub mod rbound;
pub mod spaces;

pub use concave::{
    check_v_candidate, expected_u, haar_splice, splice, splice_identity, u_value, v_lower, ExpectedU, PropertyCheck, SpliceIdentity,
    UValue, VCandidate, VCheckReport, VMidpoint, VSample,
};
pub use error::{LabError, Result};
pub use filtration::{
    boolean_isomorphism, conditional_expectation, dyadic_fraction, dyadic_haar_approximate, dyadic_partition, haar_embed, is_refinement,
    make_dyadic_filtration, random_haar_filtration, AtomicMeasureSpace, BooleanIsomorphism, Filtration, HaarKind, Partition, ProductBase,
    StepFunction,
};
pub use martingale::{
    doob_check, good_lambda_alpha, good_lambda_experiment, gundy_decompose, martingale_transform, maximal_stars, random_haar_martingale,
    stopped_value, stopping_time_first, stopping_time_from, trick_constant, weak_rmf_probe, DoobCheck, GoodLambdaReport, GundyCertificates,
    GundyParts, PredictableProcess, SimpleMartingale, Stars, StoppingTime, TrickConstant, Trigger, WeakRmfReport,
};
pub use maximal::{
    doob_maximal, fubini_heredity_check, lp_norm, lp_norm_of, rademacher_maximal, rademacher_maximal_at, rmf_ratio, telescoping_function,
    HeredityReport, MaximalConfig, MaximalReport, Telescoping,
};
pub use rademacher::{
    kk_ratio_estimate, rademacher_moment, type_cotype_estimate, EnumConfig, MomentEstimate, MomentMode, RatioEstimate, TypeCotype,
};
pub use rbound::{
    embed_witness, rbound_certify_grid, rbound_operator, rbound_scalar, rbound_scalar_warm, GridCertificate, RBoundBracket, RBoundMode,
};
pub use spaces::{dual_exponent, random_unit_vector, Space, Vector};
