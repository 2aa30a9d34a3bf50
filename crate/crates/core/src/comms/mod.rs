//! Wire format, byte ledger, communication graph, budget planning and the
//! round-based exchange.

mod budget;
mod exchange;
mod graph;
mod ledger;
mod message;

pub use budget::{BudgetInput, BudgetPlan, Link};
pub use exchange::{oracle_heatmap, AgentOutput, ExchangeOutput, HeatSource, ModelWeights, Pipeline, PipelineConfig};
pub use graph::CommGraph;
pub use ledger::{comm_volume, dense_volume, reduction_vs, CommLedger, DropRecord, LedgerEntry};
pub use message::{
    heatmap_message_len, instance_entry_len, instance_message_len, query_message_len, voxel_message_len, Message,
    MessageKind, Payload, HEADER_LEN, MAGIC, VERSION,
};
