//! The `taskasm` subcommand: compile the request language into task
//! bytecode, or disassemble existing bytecode into a readable listing.

use onionq_core::request::dsl::parse_request;
use onionq_core::request::compile::compile_task;
use onionq_core::vm::{self, CmpOp, Instr, WField};

use crate::{emit, usage, CmdError};

#[derive(clap::Args)]
pub struct Args {
    /// Request text to compile, e.g. "IF(light=ON) THEN AVG(temperature) @ roof".
    #[arg(required_unless_present = "disassemble", conflicts_with = "disassemble")]
    pub request: Option<String>,
    /// Hex-encoded task bytecode to disassemble instead of compiling.
    #[arg(long, value_name = "HEX")]
    pub disassemble: Option<String>,
}

pub fn run(args: Args) -> Result<(), CmdError> {
    let task: Vec<u8> = if let Some(hex_text) = &args.disassemble {
        hex::decode(hex_text.trim()).map_err(usage)?
    } else {
        let request = parse_request(args.request.as_deref().unwrap_or_default()).map_err(usage)?;
        compile_task(&request).map_err(usage)?
    };

    let listing = vm::decode(&task).map_err(usage)?;
    let quantities = vm::quantities(&task).map_err(usage)?;

    let mut out = format!("task: {}  ({} bytes)\n", hex::encode(&task), task.len());
    let reads = if quantities.is_empty() { "-".into() } else { quantities.join(", ") };
    out.push_str(&format!("reads: {reads}\n"));
    for (offset, instr) in listing {
        out.push_str(&format!("  {offset:04}  {}\n", mnemonic(&instr)));
    }
    emit(&out);
    Ok(())
}

fn mnemonic(instr: &Instr) -> String {
    let field = |f: &WField| match f {
        WField::Acc1 => "acc1",
        WField::Acc2 => "acc2",
        WField::Count => "count",
    };
    match instr {
        Instr::Halt => "halt".into(),
        Instr::PushConst(v) => format!("push {v:?}"),
        Instr::ReadSensor(q) => format!("read.sensor {q:?}"),
        Instr::ReadStatus(q) => format!("read.status {q:?}"),
        Instr::Cmp(op) => format!(
            "cmp {}",
            match op {
                CmpOp::Eq => "=",
                CmpOp::Ne => "!=",
                CmpOp::Lt => "<",
                CmpOp::Le => "<=",
                CmpOp::Gt => ">",
                CmpOp::Ge => ">=",
            }
        ),
        Instr::JmpIfFalse(target) => format!("jmp.false {target}"),
        Instr::LoadW(f) => format!("load.w {}", field(f)),
        Instr::StoreW(f) => format!("store.w {}", field(f)),
        Instr::Add => "add".into(),
        Instr::Mul => "mul".into(),
        Instr::Max => "max".into(),
    }
}
