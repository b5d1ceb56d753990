//! Compilation of a parsed request into task bytecode.
//!
//! Every aggregation compiles to an *additive* carrier update so that partial
//! results from different nodes and different queries can be merged by plain
//! accumulator arithmetic at the sink:
//!
//! | kind          | per-node update                                   |
//! |---------------|---------------------------------------------------|
//! | sum, avg      | `acc1 += v`, `count += 1`                         |
//! | max           | first contributor assigns, then `acc1 = max(acc1, v)`; `count += 1` |
//! | variance, std | `acc1 += v`, `acc2 += v²`, `count += 1`           |
//!
//! A request condition becomes a guard that jumps clear over the update when
//! it does not hold, so non-matching nodes complete the task without
//! contributing. The max task branches on `count == 0` to distinguish "no
//! contribution yet" from a genuine running maximum, which keeps it correct
//! for all-negative readings.

use super::dsl::{Literal, Request};
use crate::vm::{CmpOp, TaskBuilder, TaskError, WField};

/// Compile a request's operation into task bytecode. The target locations
/// play no part here; they only steer node selection.
pub fn compile_task(request: &Request) -> Result<Vec<u8>, TaskError> {
    let mut b = TaskBuilder::new();
    let end = b.label();

    if let Some(cond) = &request.condition {
        match cond.literal {
            Literal::Number(v) => {
                b.read_sensor(&cond.quantity).push(v);
            }
            Literal::State(on) => {
                b.read_status(&cond.quantity).push(if on { 1.0 } else { 0.0 });
            }
        }
        b.cmp(cond.cmp).jmp_if_false(end);
    }

    let q = &request.aggregation.quantity;
    use super::AggKind::*;
    match request.aggregation.kind {
        Sum | Avg => {
            b.read_sensor(q).load_w(WField::Acc1).add().store_w(WField::Acc1);
        }
        Max => {
            let fold = b.label();
            let tail = b.label();
            b.load_w(WField::Count).push(0.0).cmp(CmpOp::Eq).jmp_if_false(fold);
            b.read_sensor(q).store_w(WField::Acc1).jmp(tail);
            b.bind(fold);
            b.read_sensor(q).load_w(WField::Acc1).max().store_w(WField::Acc1);
            b.bind(tail);
        }
        Variance | Std => {
            b.read_sensor(q).load_w(WField::Acc1).add().store_w(WField::Acc1);
            b.read_sensor(q).read_sensor(q).mul().load_w(WField::Acc2).add().store_w(WField::Acc2);
        }
    }
    b.load_w(WField::Count).push(1.0).add().store_w(WField::Count);

    b.bind(end);
    b.finish()
}

#[cfg(test)]
mod tests {
    use super::super::dsl::parse_request;
    use super::super::{finalize, AggKind};
    use super::*;
    use crate::vm::{execute, quantities, CarrierString, MapEnvironment, DEFAULT_STEP_BUDGET};

    fn run_over(task: &[u8], readings: &[f64]) -> CarrierString {
        let mut w = CarrierString::default();
        for &v in readings {
            let env = MapEnvironment::with_sensor("temperature", v);
            let out = execute(task, &w, &env, DEFAULT_STEP_BUDGET);
            assert!(out.completed(), "{:?}", out.status);
            w = out.carrier;
        }
        w
    }

    #[test]
    fn avg_task_folds_and_sink_divides() {
        let req = parse_request("AVG(temperature) @ lab").unwrap();
        let task = compile_task(&req).unwrap();
        let w = run_over(&task, &[10.0, 20.0]);
        assert_eq!(w, CarrierString { acc1: 30.0, acc2: 0.0, count: 2 });
        assert_eq!(finalize(AggKind::Avg, &w).unwrap(), 15.0);
    }

    #[test]
    fn max_task_keeps_the_running_maximum() {
        let req = parse_request("MAX(temperature) @ lab").unwrap();
        let task = compile_task(&req).unwrap();
        let w = run_over(&task, &[3.0, 9.0, 4.0]);
        assert_eq!(w.acc1, 9.0);
        assert_eq!(w.count, 3);
        assert_eq!(finalize(AggKind::Max, &w).unwrap(), 9.0);

        // The count==0 branch makes all-negative readings come out right.
        let w = run_over(&task, &[-8.0, -3.0, -5.0]);
        assert_eq!(finalize(AggKind::Max, &w).unwrap(), -3.0);
    }

    #[test]
    fn variance_task_matches_the_textbook_value() {
        let req = parse_request("VAR(temperature) @ lab").unwrap();
        let task = compile_task(&req).unwrap();
        let w = run_over(&task, &[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(w.count, 8);
        assert_eq!(finalize(AggKind::Variance, &w).unwrap(), 4.0);
        assert_eq!(finalize(AggKind::Std, &w).unwrap(), 2.0);
    }

    #[test]
    fn false_condition_leaves_the_carrier_alone() {
        let req = parse_request("IF(light=ON) THEN AVG(temperature) @ lab").unwrap();
        let task = compile_task(&req).unwrap();

        let mut dark = MapEnvironment::with_sensor("temperature", 22.0);
        dark.status.insert("light".into(), 0.0);
        let out = execute(&task, &CarrierString::default(), &dark, DEFAULT_STEP_BUDGET);
        assert!(out.completed());
        assert_eq!(out.carrier, CarrierString::default());

        let mut lit = dark.clone();
        lit.status.insert("light".into(), 1.0);
        let out = execute(&task, &CarrierString::default(), &lit, DEFAULT_STEP_BUDGET);
        assert_eq!(out.carrier, CarrierString { acc1: 22.0, acc2: 0.0, count: 1 });
    }

    #[test]
    fn numeric_condition_reads_the_sensor_map() {
        let req = parse_request("IF(temperature>50) THEN SUM(temperature) @ lab").unwrap();
        let task = compile_task(&req).unwrap();
        assert_eq!(quantities(&task).unwrap(), vec!["temperature"]);

        let cold = MapEnvironment::with_sensor("temperature", 21.5);
        let out = execute(&task, &CarrierString::default(), &cold, DEFAULT_STEP_BUDGET);
        assert_eq!(out.carrier, CarrierString::default());

        let hot = MapEnvironment::with_sensor("temperature", 63.0);
        let out = execute(&task, &CarrierString::default(), &hot, DEFAULT_STEP_BUDGET);
        assert_eq!(out.carrier.acc1, 63.0);
    }

    #[test]
    fn compiled_tasks_fit_comfortably_in_the_default_capacity() {
        for text in [
            "SUM(co2) @ hall",
            "IF(light=ON) THEN AVG(temperature) @ a,b",
            "IF(humidity<=80) THEN VAR(particulates) @ c",
            "MAX(noise_level) @ d",
        ] {
            let task = compile_task(&parse_request(text).unwrap()).unwrap();
            assert!(task.len() <= crate::onion::DEFAULT_MAX_TASK_LEN, "{text}: {}", task.len());
        }
    }
}
