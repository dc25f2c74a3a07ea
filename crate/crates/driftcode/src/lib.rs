//! Concatenated coding and symbolwise APP decoding for
//! insertion/deletion/substitution (IDS) channels with multiple reads.
//!
//! The scheme concatenates an outer binary or nonbinary LDPC code with an
//! inner convolutional or watermark code, offset by a pseudo-random
//! sequence for synchronization. Decoding represents the inner code and
//! channel as a hidden Markov model over drift-augmented states and runs
//! exact forward/backward (BCJR) recursions — jointly over all reads on a
//! product drift space, or separately per read with a product combination
//! rule. Monte-Carlo frame-error-rate and achievable-information-rate
//! estimators evaluate schemes end to end.
//!
//! A narrative guide with runnable examples lives in `book/`; its code
//! blocks run as doc-tests of this crate.
//!
//! ```
//! use driftcode::channel::{transmit_multi, ChannelParams};
//! use driftcode::inner::{apply_offset, ConvCodeSpec, InnerCode, OffsetSequence};
//! use driftcode::trellis::{DriftBounds, InnerDecoder};
//! use driftcode::app::PriorMatrix;
//!
//! # fn main() -> Result<(), driftcode::Error> {
//! // binary (5,7)-octal convolutional code, two bits per DNA symbol
//! let code = InnerCode::Conv(ConvCodeSpec::from_octal(
//!     4, 1, 1, 2, &["5".into(), "7".into()],
//! )?);
//! let w: Vec<u8> = (0..48).map(|i| (i % 2) as u8).collect();
//! let offset = OffsetSequence::generate(7, code.codeword_len(w.len()), 4)?;
//! let x = apply_offset(&code.encode(&w)?, &offset)?;
//!
//! // two noisy reads of the same strand
//! let params = ChannelParams::new(0.01, 0.01, 0.0, 4)?;
//! let reads = transmit_multi(&x, &params, 2, 99)?;
//!
//! // exact joint inference of the encoded symbols
//! let bounds = DriftBounds::from_params(x.len(), &params, 5.0, 2);
//! let decoder = InnerDecoder::new(&code, offset, params, bounds)?;
//! let ys: Vec<Vec<u8>> = reads.into_iter().map(|r| r.received).collect();
//! let out = decoder.decode_joint(&ys, &PriorMatrix::uniform(w.len(), 2))?;
//! let decoded: Vec<u8> = (0..w.len()).map(|i| out.app.argmax_row(i) as u8).collect();
//! assert_eq!(decoded, w);
//! # Ok(())
//! # }
//! ```

pub mod alphabet;
pub mod app;
pub mod channel;
pub mod error;
pub mod eval;
pub mod inner;
pub mod ldpc;
pub mod multiread;
pub mod oracle;
pub mod pipeline;
pub mod seeds;
pub mod trellis;

pub use app::{AppMatrix, PriorMatrix};
pub use error::{Error, Result};

#[cfg(doctest)]
mod book_doctests {
    //! Runs every code block in the guide as a doc-test, keeping the book
    //! in sync with the library.

    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            pub struct $name;
        };
    }

    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(Channel, "../../../book/src/channel.md");
    chapter!(Scheme, "../../../book/src/scheme.md");
    chapter!(Trellis, "../../../book/src/trellis.md");
    chapter!(MultiRead, "../../../book/src/multiread.md");
    chapter!(Evaluation, "../../../book/src/evaluation.md");
}
