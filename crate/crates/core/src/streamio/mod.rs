//! Raw subframe streams: the on-disk container, firing-sequence
//! demultiplexing and synthetic stream generation.

mod container;
mod demux;
mod frame;
mod synth;

pub use container::{
    decode_stream, encode_stream, StreamHeader, StreamReader, StreamWriter, MAGIC, VERSION,
};
pub use demux::{demux, DemuxConfig, Demuxer, DropEvent, DropReport, Realign};
pub use frame::{CompositeFrame, RawSubframe};
pub(crate) use synth::frame_rng;
pub use synth::{synthesize_raw_stream, Trajectory, TrajectoryFrame};
