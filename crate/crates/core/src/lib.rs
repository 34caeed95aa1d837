//! Deterministic user-space simulation of a reliable-connection RDMA
//! transport that supports transparent live migration of connection
//! endpoints.
//!
//! The crate is organised around five subsystems:
//!
//! * [`verbs`]: the verbs object model (contexts, PDs, MRs, CQs, SRQs,
//!   QPs) and the application-facing API (create/modify/post/poll).
//! * [`transport`]: the per-QP requester/responder/completer tasks,
//!   PSN-sequenced go-back-N delivery, and the pause/resume connection
//!   migration protocol (`NAK_STOPPED`, `RESUME`).
//! * [`netsim`]: a discrete-event network connecting simulated nodes
//!   with configurable latency, seeded i.i.d. loss and duplication.
//! * [`checkpoint`]: atomic context dumps to a bit-exact image format
//!   and the staged restore path (CREATE, key restore, REFILL).
//! * [`migrator`]: end-to-end live migration orchestration and the
//!   per-migration latency report.
//!
//! Everything runs single-threaded on a virtual clock; a trace of every
//! packet event is a pure function of (configuration, scenario, seed).

pub mod addr;
pub mod checkpoint;
pub mod error;
pub mod migrator;
pub mod netsim;
pub mod rng;
pub mod transport;
pub mod verbs;

pub use addr::{Gid, NodeAddress};
pub use error::{ImageError, VerbsError, WireError};
pub use netsim::{NetConfig, RunOutcome, SimReport, Simulator};
