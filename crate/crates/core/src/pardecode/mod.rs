//! Parallel decoding simulator: draft heads propose a token tree, the
//! target verifies it greedily, and the heads learn online from served
//! traffic.

mod heads;
mod tree;

pub use heads::{kl_gradient, online_kl_update, online_kl_update_batch, DraftHeads, KlDirection, KlValue};
pub use tree::{
    build_tree, greedy_decode, relative_cost, serve_greedy, simulate_decode, verify, DecodeRun, DecodeStats,
    TokenTree, TreeNode, Verified, VerifyMode,
};
