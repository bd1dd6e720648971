//! eMMC command-token codec and the trigger matcher that arms the crowbar.
//!
//! A token is 48 bits, MSB first on the wire:
//!
//! ```text
//! | 47 | 46 | 45..40 | 39..8    | 7..1 | 0 |
//! |  0 | tx | index  | argument | CRC7 | 1 |
//! ```
//!
//! `tx` is 1 for host-to-card commands and 0 for card responses. The CRC7
//! (polynomial x^7 + x^3 + 1, init 0) covers bits 47..8.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const GO_IDLE_STATE: u8 = 0;
pub const SEND_STATUS: u8 = 13;
pub const READ_SINGLE_BLOCK: u8 = 17;

const CRC7_POLY: u8 = 0x09;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("bad framing: {0}")]
    BadFraming(&'static str),
    #[error("CRC mismatch: frame carries {found:#04x}, computed {expected:#04x}")]
    BadCrc { expected: u8, found: u8 },
    #[error("command index {0} does not fit in 6 bits")]
    IndexOutOfRange(u8),
    #[error("CRC input must be a whole number of bytes, got {0} bits")]
    BitLength(usize),
    #[error("frame must be 48 bits, got {0}")]
    FrameLength(usize),
    #[error("invalid frame hex {0:?}")]
    Hex(String),
}

const fn crc7_table() -> [u8; 256] {
    let mut table = [0u8; 256];
    let mut byte = 0;
    while byte < 256 {
        // CRC register kept left-aligned in a u8 (bit 7 = x^6).
        let mut crc = byte as u8;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x80 != 0 { (crc << 1) ^ (CRC7_POLY << 1) } else { crc << 1 };
            bit += 1;
        }
        table[byte] = crc;
        byte += 1;
    }
    table
}

static CRC7_TABLE: [u8; 256] = crc7_table();

/// CRC7 over whole bytes, MSB first.
pub fn crc7(bytes: &[u8]) -> u8 {
    let mut crc = 0u8;
    for &b in bytes {
        crc = CRC7_TABLE[(crc ^ b) as usize];
    }
    crc >> 1
}

/// CRC7 over an MSB-first bit sequence whose length is a multiple of 8.
/// The empty sequence has CRC 0.
pub fn crc7_compute(bits: &[bool]) -> Result<u8, FrameError> {
    if !bits.len().is_multiple_of(8) {
        return Err(FrameError::BitLength(bits.len()));
    }
    let bytes: Vec<u8> = bits
        .chunks(8)
        .map(|chunk| chunk.iter().fold(0u8, |acc, &b| (acc << 1) | b as u8))
        .collect();
    Ok(crc7(&bytes))
}

/// A decoded 48-bit command or response token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CommandFrame {
    host_to_card: bool,
    index: u8,
    argument: u32,
    crc7: u8,
}

impl CommandFrame {
    /// Host-issued command with a freshly computed CRC.
    pub fn command(index: u8, argument: u32) -> Result<Self, FrameError> {
        Self::build(true, index, argument)
    }

    /// Card response tagged with the index of the command it answers.
    pub fn response(index: u8, argument: u32) -> Result<Self, FrameError> {
        Self::build(false, index, argument)
    }

    fn build(host_to_card: bool, index: u8, argument: u32) -> Result<Self, FrameError> {
        if index >= 64 {
            return Err(FrameError::IndexOutOfRange(index));
        }
        let head = prefix_bytes(host_to_card, index, argument);
        Ok(Self { host_to_card, index, argument, crc7: crc7(&head) })
    }

    pub fn start_bit(&self) -> bool {
        false
    }

    pub fn transmission_bit(&self) -> bool {
        self.host_to_card
    }

    pub fn is_command(&self) -> bool {
        self.host_to_card
    }

    pub fn index(&self) -> u8 {
        self.index
    }

    pub fn argument(&self) -> u32 {
        self.argument
    }

    pub fn crc7(&self) -> u8 {
        self.crc7
    }

    pub fn end_bit(&self) -> bool {
        true
    }

    pub fn to_bytes(&self) -> [u8; 6] {
        let head = prefix_bytes(self.host_to_card, self.index, self.argument);
        [head[0], head[1], head[2], head[3], head[4], (self.crc7 << 1) | 1]
    }

    /// Frame as the low 48 bits of a `u64`.
    pub fn to_bits(&self) -> u64 {
        self.to_bytes().iter().fold(0u64, |acc, &b| (acc << 8) | b as u64)
    }

    pub fn to_hex(&self) -> String {
        format!("{:012x}", self.to_bits())
    }
}

fn prefix_bytes(host_to_card: bool, index: u8, argument: u32) -> [u8; 5] {
    let a = argument.to_be_bytes();
    [((host_to_card as u8) << 6) | (index & 0x3f), a[0], a[1], a[2], a[3]]
}

impl fmt::Display for CommandFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for CommandFrame {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 12 {
            return Err(FrameError::Hex(s.to_owned()));
        }
        let bits = u64::from_str_radix(s, 16).map_err(|_| FrameError::Hex(s.to_owned()))?;
        decode_bits(bits)
    }
}

/// Encode a host command.
pub fn encode_command(index: u8, argument: u32) -> Result<CommandFrame, FrameError> {
    CommandFrame::command(index, argument)
}

/// Decode six wire bytes, checking framing bits and CRC.
pub fn decode_frame(bytes: &[u8]) -> Result<CommandFrame, FrameError> {
    if bytes.len() != 6 {
        return Err(FrameError::FrameLength(bytes.len() * 8));
    }
    if bytes[0] & 0x80 != 0 {
        return Err(FrameError::BadFraming("start bit is 1"));
    }
    if bytes[5] & 0x01 != 1 {
        return Err(FrameError::BadFraming("end bit is 0"));
    }
    let expected = crc7(&bytes[..5]);
    let found = bytes[5] >> 1;
    if expected != found {
        return Err(FrameError::BadCrc { expected, found });
    }
    Ok(CommandFrame {
        host_to_card: bytes[0] & 0x40 != 0,
        index: bytes[0] & 0x3f,
        argument: u32::from_be_bytes([bytes[1], bytes[2], bytes[3], bytes[4]]),
        crc7: found,
    })
}

/// Decode a frame held in the low 48 bits of `bits`.
pub fn decode_bits(bits: u64) -> Result<CommandFrame, FrameError> {
    if bits >> 48 != 0 {
        return Err(FrameError::FrameLength(64 - bits.leading_zeros() as usize));
    }
    decode_frame(&bits.to_be_bytes()[2..])
}

/// Command index plus an optional masked argument compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TriggerSpec {
    pub command_index: u8,
    pub argument_match: Option<ArgumentMatch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArgumentMatch {
    pub value: u32,
    pub mask: u32,
}

impl TriggerSpec {
    pub fn index(command_index: u8) -> Self {
        Self { command_index, argument_match: None }
    }

    pub fn with_argument(mut self, value: u32, mask: u32) -> Self {
        self.argument_match = Some(ArgumentMatch { value, mask });
        self
    }

    /// The card's answer to the READ_SINGLE_BLOCK for the MBR.
    pub fn mbr_read_response() -> Self {
        Self::index(READ_SINGLE_BLOCK)
    }
}

pub fn match_trigger(frame: &CommandFrame, spec: &TriggerSpec) -> bool {
    frame.index() == spec.command_index
        && spec
            .argument_match
            .is_none_or(|m| frame.argument() & m.mask == m.value & m.mask)
}
