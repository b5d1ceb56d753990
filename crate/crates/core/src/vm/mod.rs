//! The task virtual machine: a tiny stack interpreter over `f64` values that
//! target nodes run against their local sensor readings, folding results into
//! the 32-byte carrier that travels with the query body.
//!
//! Tasks are untrusted bytes from the network, so the interpreter is fully
//! sandboxed: [`validate`] statically rejects malformed bytecode (unknown
//! opcodes, truncated operands, jumps off instruction boundaries), and
//! execution enforces a stack limit and an instruction budget at runtime.
//! Runtime trouble never aborts query processing — the node keeps the carrier
//! unchanged and forwards the query as if it had only relayed it.
//!
//! # Carrier layout (32 bytes, little-endian)
//!
//! ```text
//! acc1: f64 ‖ acc2: f64 ‖ count: u64 ‖ reserved: 8 zero bytes
//! ```
//!
//! # Instruction set
//!
//! | opcode | mnemonic        | operand            | effect                              |
//! |--------|-----------------|--------------------|-------------------------------------|
//! | `0x00` | `halt`          | —                  | stop, task completed                |
//! | `0x01` | `push`          | f64 (8 bytes LE)   | push constant                       |
//! | `0x02` | `read_sensor`   | len u8 ‖ label     | push the named sensor reading       |
//! | `0x03` | `read_status`   | len u8 ‖ label     | push the named status value         |
//! | `0x04` | `cmp`           | u8 comparison      | pop b, pop a, push `a ⋄ b` as 0/1   |
//! | `0x05` | `jmp_if_false`  | u16 LE byte offset | pop cond; jump when cond is zero    |
//! | `0x06` | `load_w`        | u8 field           | push a carrier field                |
//! | `0x07` | `store_w`       | u8 field           | pop into a carrier field            |
//! | `0x08` | `add`           | —                  | pop b, pop a, push a + b            |
//! | `0x09` | `mul`           | —                  | pop b, pop a, push a · b            |
//! | `0x0A` | `max`           | —                  | pop b, pop a, push max(a, b)        |
//!
//! Running off the end of the bytecode is an implicit `halt`. There is no
//! unconditional jump; `push 0` followed by `jmp_if_false` serves.

pub mod asm;

use std::collections::BTreeMap;

/// Size of the serialized carrier.
pub const CARRIER_LEN: usize = 32;
/// Maximum operand stack depth; exceeding it is a runtime fault.
pub const MAX_STACK: usize = 16;
/// Default instruction budget per execution (the `Δ_t` deployment constant).
pub const DEFAULT_STEP_BUDGET: u64 = 10_000;

pub const OP_HALT: u8 = 0x00;
pub const OP_PUSH_CONST: u8 = 0x01;
pub const OP_READ_SENSOR: u8 = 0x02;
pub const OP_READ_STATUS: u8 = 0x03;
pub const OP_CMP: u8 = 0x04;
pub const OP_JMP_IF_FALSE: u8 = 0x05;
pub const OP_LOAD_W: u8 = 0x06;
pub const OP_STORE_W: u8 = 0x07;
pub const OP_ADD: u8 = 0x08;
pub const OP_MUL: u8 = 0x09;
pub const OP_MAX: u8 = 0x0A;

/// The aggregation carrier: two accumulators and a contribution count.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CarrierString {
    pub acc1: f64,
    pub acc2: f64,
    pub count: u64,
}

impl CarrierString {
    pub fn to_bytes(&self) -> [u8; CARRIER_LEN] {
        let mut out = [0u8; CARRIER_LEN];
        out[0..8].copy_from_slice(&self.acc1.to_le_bytes());
        out[8..16].copy_from_slice(&self.acc2.to_le_bytes());
        out[16..24].copy_from_slice(&self.count.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8; CARRIER_LEN]) -> Self {
        CarrierString {
            acc1: f64::from_le_bytes(bytes[0..8].try_into().unwrap()),
            acc2: f64::from_le_bytes(bytes[8..16].try_into().unwrap()),
            count: u64::from_le_bytes(bytes[16..24].try_into().unwrap()),
        }
    }
}

/// Comparison operator carried by `cmp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum CmpOp {
    Eq = 0,
    Ne = 1,
    Lt = 2,
    Le = 3,
    Gt = 4,
    Ge = 5,
}

impl CmpOp {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => CmpOp::Eq,
            1 => CmpOp::Ne,
            2 => CmpOp::Lt,
            3 => CmpOp::Le,
            4 => CmpOp::Gt,
            5 => CmpOp::Ge,
            _ => return None,
        })
    }

    pub fn mnemonic(&self) -> &'static str {
        match self {
            CmpOp::Eq => "eq",
            CmpOp::Ne => "ne",
            CmpOp::Lt => "lt",
            CmpOp::Le => "le",
            CmpOp::Gt => "gt",
            CmpOp::Ge => "ge",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Self> {
        Some(match s {
            "eq" => CmpOp::Eq,
            "ne" => CmpOp::Ne,
            "lt" => CmpOp::Lt,
            "le" => CmpOp::Le,
            "gt" => CmpOp::Gt,
            "ge" => CmpOp::Ge,
            _ => return None,
        })
    }

    fn apply(&self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

/// Carrier field addressed by `load_w` / `store_w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum WField {
    Acc1 = 0,
    Acc2 = 1,
    Count = 2,
}

impl WField {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => WField::Acc1,
            1 => WField::Acc2,
            2 => WField::Count,
            _ => return None,
        })
    }

    pub fn mnemonic(&self) -> &'static str {
        match self {
            WField::Acc1 => "acc1",
            WField::Acc2 => "acc2",
            WField::Count => "count",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Self> {
        Some(match s {
            "acc1" => WField::Acc1,
            "acc2" => WField::Acc2,
            "count" => WField::Count,
            _ => return None,
        })
    }
}

/// Static bytecode rejection reasons.
#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum TaskError {
    #[error("unknown opcode {opcode:#04x} at offset {offset}")]
    UnknownOpcode { offset: usize, opcode: u8 },
    #[error("operand truncated at offset {offset}")]
    TruncatedOperand { offset: usize },
    #[error("invalid comparison code {code} at offset {offset}")]
    BadCompare { offset: usize, code: u8 },
    #[error("invalid carrier field {code} at offset {offset}")]
    BadField { offset: usize, code: u8 },
    #[error("label at offset {offset} is not valid UTF-8")]
    BadLabel { offset: usize },
    #[error("jump at offset {offset} targets {target}, not an instruction boundary")]
    BadJumpTarget { offset: usize, target: usize },
}

/// Runtime fault categories; all leave the carrier unchanged.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VmFault {
    StackOverflow,
    StackUnderflow,
    UnknownQuantity(String),
}

impl std::fmt::Display for VmFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VmFault::StackOverflow => write!(f, "stack overflow"),
            VmFault::StackUnderflow => write!(f, "stack underflow"),
            VmFault::UnknownQuantity(q) => write!(f, "unknown quantity {q:?}"),
        }
    }
}

/// How an execution ended.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExecStatus {
    /// Reached `halt` or the end of the bytecode; the carrier update is kept.
    Completed,
    /// The instruction budget ran out; the carrier is unchanged.
    Interrupted,
    /// A runtime fault; the carrier is unchanged.
    Fault(VmFault),
}

/// The result of one execution: the (possibly updated) carrier and how it went.
#[derive(Clone, Debug, PartialEq)]
pub struct ExecOutcome {
    pub status: ExecStatus,
    pub carrier: CarrierString,
    pub steps: u64,
}

impl ExecOutcome {
    pub fn completed(&self) -> bool {
        self.status == ExecStatus::Completed
    }
}

/// Where `read_sensor` / `read_status` values come from. `None` for a label
/// this node cannot answer is a runtime fault, not a protocol error.
pub trait Environment {
    fn read_sensor(&self, label: &str) -> Option<f64>;
    fn read_status(&self, label: &str) -> Option<f64>;
}

/// A map-backed [`Environment`] for nodes and tests.
#[derive(Clone, Debug, Default)]
pub struct MapEnvironment {
    pub sensors: BTreeMap<String, f64>,
    pub status: BTreeMap<String, f64>,
}

impl MapEnvironment {
    pub fn with_sensor(label: &str, value: f64) -> Self {
        let mut env = MapEnvironment::default();
        env.sensors.insert(label.to_string(), value);
        env
    }
}

impl Environment for MapEnvironment {
    fn read_sensor(&self, label: &str) -> Option<f64> {
        self.sensors.get(label).copied()
    }
    fn read_status(&self, label: &str) -> Option<f64> {
        self.status.get(label).copied()
    }
}

/// One decoded instruction, with its byte offset and total encoded length.
#[derive(Clone, Debug, PartialEq)]
pub enum Instr {
    Halt,
    PushConst(f64),
    ReadSensor(String),
    ReadStatus(String),
    Cmp(CmpOp),
    JmpIfFalse(u16),
    LoadW(WField),
    StoreW(WField),
    Add,
    Mul,
    Max,
}

/// Decode the instruction at `offset`; returns the instruction and the offset
/// just past it.
fn decode_at(task: &[u8], offset: usize) -> Result<(Instr, usize), TaskError> {
    let opcode = task[offset];
    let operand = &task[offset + 1..];
    let need = |n: usize| {
        if operand.len() < n {
            Err(TaskError::TruncatedOperand { offset })
        } else {
            Ok(())
        }
    };
    Ok(match opcode {
        OP_HALT => (Instr::Halt, offset + 1),
        OP_PUSH_CONST => {
            need(8)?;
            let v = f64::from_le_bytes(operand[..8].try_into().unwrap());
            (Instr::PushConst(v), offset + 9)
        }
        OP_READ_SENSOR | OP_READ_STATUS => {
            need(1)?;
            let len = operand[0] as usize;
            need(1 + len)?;
            let label = std::str::from_utf8(&operand[1..1 + len])
                .map_err(|_| TaskError::BadLabel { offset })?
                .to_string();
            let instr = if opcode == OP_READ_SENSOR {
                Instr::ReadSensor(label)
            } else {
                Instr::ReadStatus(label)
            };
            (instr, offset + 2 + len)
        }
        OP_CMP => {
            need(1)?;
            let op = CmpOp::from_code(operand[0])
                .ok_or(TaskError::BadCompare { offset, code: operand[0] })?;
            (Instr::Cmp(op), offset + 2)
        }
        OP_JMP_IF_FALSE => {
            need(2)?;
            let target = u16::from_le_bytes(operand[..2].try_into().unwrap());
            (Instr::JmpIfFalse(target), offset + 3)
        }
        OP_LOAD_W | OP_STORE_W => {
            need(1)?;
            let field = WField::from_code(operand[0])
                .ok_or(TaskError::BadField { offset, code: operand[0] })?;
            let instr =
                if opcode == OP_LOAD_W { Instr::LoadW(field) } else { Instr::StoreW(field) };
            (instr, offset + 2)
        }
        OP_ADD => (Instr::Add, offset + 1),
        OP_MUL => (Instr::Mul, offset + 1),
        OP_MAX => (Instr::Max, offset + 1),
        other => return Err(TaskError::UnknownOpcode { offset, opcode: other }),
    })
}

/// Decode a whole task into `(offset, instruction)` pairs.
pub fn decode(task: &[u8]) -> Result<Vec<(usize, Instr)>, TaskError> {
    let mut out = Vec::new();
    let mut offset = 0;
    while offset < task.len() {
        let (instr, next) = decode_at(task, offset)?;
        out.push((offset, instr));
        offset = next;
    }
    Ok(out)
}

/// Statically validate bytecode: every opcode known, every operand complete,
/// every jump landing on an instruction boundary (or one past the end).
pub fn validate(task: &[u8]) -> Result<(), TaskError> {
    let instrs = decode(task)?;
    let mut boundaries: Vec<usize> = instrs.iter().map(|(o, _)| *o).collect();
    boundaries.push(task.len());
    for (offset, instr) in &instrs {
        if let Instr::JmpIfFalse(target) = instr {
            let target = *target as usize;
            if !boundaries.contains(&target) {
                return Err(TaskError::BadJumpTarget { offset: *offset, target });
            }
        }
    }
    Ok(())
}

/// The sensor/status labels a task reads, in first-appearance order. This is
/// exactly what the task bytes reveal to anyone who can decrypt the body.
pub fn quantities(task: &[u8]) -> Result<Vec<String>, TaskError> {
    let mut out: Vec<String> = Vec::new();
    for (_, instr) in decode(task)? {
        if let Instr::ReadSensor(label) | Instr::ReadStatus(label) = instr {
            if !out.contains(&label) {
                out.push(label);
            }
        }
    }
    Ok(out)
}

/// Run validated bytecode against an environment, folding into a copy of `w`.
///
/// Returns the updated carrier only when the task ran to completion; on a
/// fault or an exhausted budget the returned carrier equals the input, so the
/// node contributes nothing. Call [`validate`] first — malformed bytecode here
/// is reported as a fault rather than a panic, but without precise offsets.
pub fn execute(
    task: &[u8],
    w: &CarrierString,
    env: &dyn Environment,
    budget: u64,
) -> ExecOutcome {
    let mut carrier = *w;
    let mut stack: Vec<f64> = Vec::with_capacity(MAX_STACK);
    let mut pc = 0usize;
    let mut steps = 0u64;

    let fault = |f: VmFault, steps: u64| ExecOutcome {
        status: ExecStatus::Fault(f),
        carrier: *w,
        steps,
    };

    while pc < task.len() {
        if steps >= budget {
            return ExecOutcome { status: ExecStatus::Interrupted, carrier: *w, steps };
        }
        steps += 1;
        let (instr, next) = match decode_at(task, pc) {
            Ok(v) => v,
            // Unreachable after validate(); treated as a fault for robustness.
            Err(_) => return fault(VmFault::StackUnderflow, steps),
        };
        pc = next;

        macro_rules! pop {
            () => {
                match stack.pop() {
                    Some(v) => v,
                    None => return fault(VmFault::StackUnderflow, steps),
                }
            };
        }
        macro_rules! push {
            ($v:expr) => {{
                if stack.len() >= MAX_STACK {
                    return fault(VmFault::StackOverflow, steps);
                }
                stack.push($v);
            }};
        }

        match instr {
            Instr::Halt => break,
            Instr::PushConst(v) => push!(v),
            Instr::ReadSensor(label) => match env.read_sensor(&label) {
                Some(v) => push!(v),
                None => return fault(VmFault::UnknownQuantity(label), steps),
            },
            Instr::ReadStatus(label) => match env.read_status(&label) {
                Some(v) => push!(v),
                None => return fault(VmFault::UnknownQuantity(label), steps),
            },
            Instr::Cmp(op) => {
                let b = pop!();
                let a = pop!();
                push!(if op.apply(a, b) { 1.0 } else { 0.0 });
            }
            Instr::JmpIfFalse(target) => {
                let cond = pop!();
                if cond == 0.0 {
                    pc = target as usize;
                }
            }
            Instr::LoadW(field) => {
                let v = match field {
                    WField::Acc1 => carrier.acc1,
                    WField::Acc2 => carrier.acc2,
                    WField::Count => carrier.count as f64,
                };
                push!(v);
            }
            Instr::StoreW(field) => {
                let v = pop!();
                match field {
                    WField::Acc1 => carrier.acc1 = v,
                    WField::Acc2 => carrier.acc2 = v,
                    WField::Count => carrier.count = f64_to_count(v),
                }
            }
            Instr::Add => {
                let b = pop!();
                let a = pop!();
                push!(a + b);
            }
            Instr::Mul => {
                let b = pop!();
                let a = pop!();
                push!(a * b);
            }
            Instr::Max => {
                let b = pop!();
                let a = pop!();
                push!(a.max(b));
            }
        }
    }

    ExecOutcome { status: ExecStatus::Completed, carrier, steps }
}

/// Saturating conversion for `store_w count`: NaN and negatives clamp to 0.
fn f64_to_count(v: f64) -> u64 {
    if v.is_nan() || v < 0.0 {
        0
    } else if v >= u64::MAX as f64 {
        u64::MAX
    } else {
        v as u64
    }
}

/// Incremental bytecode builder with forward-label jump resolution.
///
/// ```
/// use onionq_core::vm::{TaskBuilder, CmpOp, WField};
/// let mut b = TaskBuilder::new();
/// let end = b.label();
/// b.read_sensor("temperature").push(50.0).cmp(CmpOp::Gt).jmp_if_false(end);
/// b.push(1.0).store_w(WField::Acc1);
/// b.bind(end);
/// let task = b.finish().unwrap();
/// ```
#[derive(Default)]
pub struct TaskBuilder {
    bytes: Vec<u8>,
    labels: Vec<Option<u16>>,
    fixups: Vec<(usize, usize)>, // (byte position of u16 operand, label index)
}

/// A jump target handed out by [`TaskBuilder::label`].
#[derive(Clone, Copy, Debug)]
pub struct Label(usize);

impl TaskBuilder {
    pub fn new() -> Self {
        TaskBuilder::default()
    }

    /// Allocate a label to jump to; bind it later with [`TaskBuilder::bind`].
    pub fn label(&mut self) -> Label {
        self.labels.push(None);
        Label(self.labels.len() - 1)
    }

    /// Fix a label to the current position.
    pub fn bind(&mut self, label: Label) -> &mut Self {
        self.labels[label.0] = Some(self.bytes.len() as u16);
        self
    }

    pub fn halt(&mut self) -> &mut Self {
        self.bytes.push(OP_HALT);
        self
    }

    pub fn push(&mut self, v: f64) -> &mut Self {
        self.bytes.push(OP_PUSH_CONST);
        self.bytes.extend_from_slice(&v.to_le_bytes());
        self
    }

    fn read(&mut self, opcode: u8, label: &str) -> &mut Self {
        assert!(label.len() <= u8::MAX as usize, "quantity label too long");
        self.bytes.push(opcode);
        self.bytes.push(label.len() as u8);
        self.bytes.extend_from_slice(label.as_bytes());
        self
    }

    pub fn read_sensor(&mut self, label: &str) -> &mut Self {
        self.read(OP_READ_SENSOR, label)
    }

    pub fn read_status(&mut self, label: &str) -> &mut Self {
        self.read(OP_READ_STATUS, label)
    }

    pub fn cmp(&mut self, op: CmpOp) -> &mut Self {
        self.bytes.push(OP_CMP);
        self.bytes.push(op as u8);
        self
    }

    pub fn jmp_if_false(&mut self, label: Label) -> &mut Self {
        self.bytes.push(OP_JMP_IF_FALSE);
        self.fixups.push((self.bytes.len(), label.0));
        self.bytes.extend_from_slice(&0u16.to_le_bytes());
        self
    }

    /// `push 0` + `jmp_if_false`: the unconditional jump idiom.
    pub fn jmp(&mut self, label: Label) -> &mut Self {
        self.push(0.0).jmp_if_false(label)
    }

    pub fn load_w(&mut self, field: WField) -> &mut Self {
        self.bytes.push(OP_LOAD_W);
        self.bytes.push(field as u8);
        self
    }

    pub fn store_w(&mut self, field: WField) -> &mut Self {
        self.bytes.push(OP_STORE_W);
        self.bytes.push(field as u8);
        self
    }

    pub fn add(&mut self) -> &mut Self {
        self.bytes.push(OP_ADD);
        self
    }

    pub fn mul(&mut self) -> &mut Self {
        self.bytes.push(OP_MUL);
        self
    }

    pub fn max(&mut self) -> &mut Self {
        self.bytes.push(OP_MAX);
        self
    }

    /// Resolve labels and validate the finished bytecode.
    pub fn finish(self) -> Result<Vec<u8>, TaskError> {
        let mut bytes = self.bytes;
        for (pos, label) in self.fixups {
            let target = self.labels[label]
                .unwrap_or_else(|| panic!("label {label} never bound"));
            bytes[pos..pos + 2].copy_from_slice(&target.to_le_bytes());
        }
        validate(&bytes)?;
        Ok(bytes)
    }
}
