//! A line-oriented text form for task bytecode, for authoring tasks by hand
//! and inspecting tasks pulled out of query bodies.
//!
//! ```text
//! ; contribute when the reading exceeds a threshold
//!         read_sensor temperature
//!         push 50
//!         cmp gt
//!         jmp_if_false end
//!         read_sensor temperature
//!         load_w acc1
//!         add
//!         store_w acc1
//!         load_w count
//!         push 1
//!         add
//!         store_w count
//! end:
//! ```
//!
//! One instruction per line; `;` or `#` starts a comment; a `name:` line (or
//! prefix) binds a jump label at the next instruction. `jmp_if_false` accepts
//! a label or a bare byte offset. Read labels run to the end of the line, so
//! quantity names may contain spaces.

use super::{
    decode, validate, CmpOp, Instr, TaskError, WField, OP_ADD, OP_CMP, OP_HALT, OP_JMP_IF_FALSE,
    OP_LOAD_W, OP_MAX, OP_MUL, OP_PUSH_CONST, OP_READ_SENSOR, OP_READ_STATUS, OP_STORE_W,
};
use std::collections::HashMap;
use std::fmt::Write as _;

/// Why a text program failed to assemble.
#[derive(Debug, PartialEq, thiserror::Error)]
pub enum AsmError {
    #[error("line {line}: unknown mnemonic {word:?}")]
    UnknownMnemonic { line: usize, word: String },
    #[error("line {line}: {mnemonic} needs an operand")]
    MissingOperand { line: usize, mnemonic: String },
    #[error("line {line}: bad operand: {what}")]
    BadOperand { line: usize, what: String },
    #[error("line {line}: label {name:?} is already defined")]
    DuplicateLabel { line: usize, name: String },
    #[error("undefined label {name:?}")]
    UndefinedLabel { name: String },
    #[error(transparent)]
    Task(#[from] TaskError),
}

fn is_label_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Assemble text into bytecode. Two passes: lay out instructions and bind
/// labels, then patch jump operands and validate.
pub fn assemble(text: &str) -> Result<Vec<u8>, AsmError> {
    let mut bytes = Vec::new();
    let mut labels: HashMap<String, u16> = HashMap::new();
    let mut fixups: Vec<(usize, usize, String)> = Vec::new(); // (byte pos, line, name)

    for (line_idx, raw) in text.lines().enumerate() {
        let line_no = line_idx + 1;
        let mut line = raw;
        if let Some(cut) = line.find([';', '#']) {
            line = &line[..cut];
        }
        let mut line = line.trim();

        // Leading `name:` label definitions; several may stack on one line.
        while let Some(colon) = line.find(':') {
            let (name, rest) = line.split_at(colon);
            let name = name.trim();
            if !is_label_name(name) {
                break;
            }
            if labels.insert(name.to_string(), bytes.len() as u16).is_some() {
                return Err(AsmError::DuplicateLabel { line: line_no, name: name.to_string() });
            }
            line = rest[1..].trim();
        }
        if line.is_empty() {
            continue;
        }

        let (mnemonic, operand) = match line.split_once(char::is_whitespace) {
            Some((m, rest)) => (m, rest.trim()),
            None => (line, ""),
        };
        let need_operand = || -> Result<&str, AsmError> {
            if operand.is_empty() {
                Err(AsmError::MissingOperand { line: line_no, mnemonic: mnemonic.to_string() })
            } else {
                Ok(operand)
            }
        };

        match mnemonic {
            "halt" => bytes.push(OP_HALT),
            "push" => {
                let v: f64 = need_operand()?.parse().map_err(|_| AsmError::BadOperand {
                    line: line_no,
                    what: format!("{operand:?} is not a number"),
                })?;
                bytes.push(OP_PUSH_CONST);
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            "read_sensor" | "read_status" => {
                let label = need_operand()?;
                if label.len() > u8::MAX as usize {
                    return Err(AsmError::BadOperand {
                        line: line_no,
                        what: format!("quantity label {label:?} exceeds 255 bytes"),
                    });
                }
                bytes.push(if mnemonic == "read_sensor" { OP_READ_SENSOR } else { OP_READ_STATUS });
                bytes.push(label.len() as u8);
                bytes.extend_from_slice(label.as_bytes());
            }
            "cmp" => {
                let op = CmpOp::from_mnemonic(need_operand()?).ok_or_else(|| {
                    AsmError::BadOperand {
                        line: line_no,
                        what: format!("{operand:?} is not a comparison (eq ne lt le gt ge)"),
                    }
                })?;
                bytes.push(OP_CMP);
                bytes.push(op as u8);
            }
            "jmp_if_false" => {
                let target = need_operand()?;
                bytes.push(OP_JMP_IF_FALSE);
                if let Ok(offset) = target.parse::<u16>() {
                    bytes.extend_from_slice(&offset.to_le_bytes());
                } else if is_label_name(target) {
                    fixups.push((bytes.len(), line_no, target.to_string()));
                    bytes.extend_from_slice(&0u16.to_le_bytes());
                } else {
                    return Err(AsmError::BadOperand {
                        line: line_no,
                        what: format!("{target:?} is neither a label nor a byte offset"),
                    });
                }
            }
            "load_w" | "store_w" => {
                let field = WField::from_mnemonic(need_operand()?).ok_or_else(|| {
                    AsmError::BadOperand {
                        line: line_no,
                        what: format!("{operand:?} is not a carrier field (acc1 acc2 count)"),
                    }
                })?;
                bytes.push(if mnemonic == "load_w" { OP_LOAD_W } else { OP_STORE_W });
                bytes.push(field as u8);
            }
            "add" => bytes.push(OP_ADD),
            "mul" => bytes.push(OP_MUL),
            "max" => bytes.push(OP_MAX),
            other => {
                return Err(AsmError::UnknownMnemonic { line: line_no, word: other.to_string() })
            }
        }
    }

    for (pos, _line, name) in fixups {
        let target = *labels
            .get(&name)
            .ok_or_else(|| AsmError::UndefinedLabel { name: name.clone() })?;
        bytes[pos..pos + 2].copy_from_slice(&target.to_le_bytes());
    }
    validate(&bytes)?;
    Ok(bytes)
}

/// Render bytecode back to assembler text, synthesizing `L<offset>` labels at
/// jump targets. `assemble(disassemble(t))` reproduces `t` byte for byte.
pub fn disassemble(task: &[u8]) -> Result<String, TaskError> {
    validate(task)?;
    let instrs = decode(task)?;
    let mut targets: Vec<usize> = instrs
        .iter()
        .filter_map(|(_, i)| match i {
            Instr::JmpIfFalse(t) => Some(*t as usize),
            _ => None,
        })
        .collect();
    targets.sort_unstable();
    targets.dedup();

    let mut out = String::new();
    for (offset, instr) in &instrs {
        if targets.contains(offset) {
            writeln!(out, "L{offset}:").unwrap();
        }
        let _ = match instr {
            Instr::Halt => writeln!(out, "        halt"),
            Instr::PushConst(v) => writeln!(out, "        push {v}"),
            Instr::ReadSensor(label) => writeln!(out, "        read_sensor {label}"),
            Instr::ReadStatus(label) => writeln!(out, "        read_status {label}"),
            Instr::Cmp(op) => writeln!(out, "        cmp {}", op.mnemonic()),
            Instr::JmpIfFalse(t) => writeln!(out, "        jmp_if_false L{t}"),
            Instr::LoadW(f) => writeln!(out, "        load_w {}", f.mnemonic()),
            Instr::StoreW(f) => writeln!(out, "        store_w {}", f.mnemonic()),
            Instr::Add => writeln!(out, "        add"),
            Instr::Mul => writeln!(out, "        mul"),
            Instr::Max => writeln!(out, "        max"),
        };
    }
    if targets.contains(&task.len()) {
        writeln!(out, "L{}:", task.len()).unwrap();
    }
    Ok(out)
}
