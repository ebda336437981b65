//! Append-only block journal: each record is a big-endian `u32` length
//! followed by the block's canonical JSON.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, Read, Write};
use std::path::Path;

use super::{Block, LedgerError};
use crate::canonical;

fn io_err(e: std::io::Error) -> LedgerError {
    LedgerError::Journal(e.to_string())
}

pub fn encode_record(block: &Block, out: &mut Vec<u8>) {
    let body = canonical::to_vec(block);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
}

pub struct JournalWriter {
    file: File,
}

impl JournalWriter {
    pub fn open(path: &Path) -> Result<Self, LedgerError> {
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
        Ok(JournalWriter { file })
    }

    pub fn append(&mut self, block: &Block) -> Result<(), LedgerError> {
        let mut record = Vec::new();
        encode_record(block, &mut record);
        self.file.write_all(&record).map_err(io_err)?;
        self.file.flush().map_err(io_err)
    }
}

pub fn decode_records(mut bytes: &[u8]) -> Result<Vec<Block>, LedgerError> {
    let mut blocks = Vec::new();
    while !bytes.is_empty() {
        if bytes.len() < 4 {
            return Err(LedgerError::Journal("truncated length prefix".into()));
        }
        let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        bytes = &bytes[4..];
        if bytes.len() < len {
            return Err(LedgerError::Journal("truncated block record".into()));
        }
        let block = canonical::from_slice(&bytes[..len]).map_err(|e| LedgerError::Journal(e.to_string()))?;
        blocks.push(block);
        bytes = &bytes[len..];
    }
    Ok(blocks)
}

pub fn read_journal(path: &Path) -> Result<Vec<Block>, LedgerError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io_err)?).read_to_end(&mut bytes).map_err(io_err)?;
    decode_records(&bytes)
}
