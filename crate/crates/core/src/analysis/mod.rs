//! Post-training explanations: prototype-guided counter-condition FC, mask
//! statistics, difference maps and patient subtyping.

mod counter;
mod mask;
pub(crate) mod report;
mod stats;
mod subtype;

pub use counter::{
    apply_extreme_rule, counter_condition_classify, diff_map, diff_maps, extreme_count, generate_pfc, mean_diff,
    opposite, pfc_from_features, top_abs_indices, CounterConditionReport, CounterEvaluation, CounterPrediction,
    ExtremeMode,
};
pub use mask::{degree_centrality, mask_statistics, MaskStats, SELECT_THRESHOLD};
pub use report::{
    write_counter_metrics, write_diff_edges, write_mask_plotdata, write_mask_stats, write_subtype_plotdata,
    write_subtypes, write_diff_plotdata,
};
pub use stats::{adjusted_rand_index, anova_oneway, pearson, percentile, welch_t_test};
pub use subtype::{changed_degree_centrality, cut_tree, subtype_cluster, ward_linkage, Merge, SubtypeResult};
