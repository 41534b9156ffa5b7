use std::io::{BufRead, Write};

use super::{BufferError, RolloutRecord};

/// Header line of the tab-separated record dump.
///
/// The last two columns are optional on read.
pub const DUMP_HEADER: &str = "#rollout_id\tprompt_id\tgroup_id\tcreation_step\tpolicy_version\treward\tis_correct\tbehavior_logprob\tadvantage\tuse_count\taction\tgroup_mean_reward";

pub fn write_records<'a, W, I>(mut out: W, records: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a RolloutRecord>,
{
    writeln!(out, "{DUMP_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.rollout_id(),
            r.prompt_id(),
            r.group_id(),
            r.creation_step(),
            r.policy_version(),
            r.reward(),
            r.is_correct(),
            r.behavior_logprob(),
            r.advantage(),
            r.use_count(),
            r.action(),
            r.group_mean_reward(),
        )?;
    }
    Ok(())
}

/// Parses a dump written by [`write_records`]. Blank lines and lines
/// starting with `#` are skipped.
pub fn read_records<R: BufRead>(input: R) -> Result<Vec<RolloutRecord>, BufferError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| BufferError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(parse_line(trimmed, line_no)?);
    }
    Ok(out)
}

fn parse_line(line: &str, line_no: usize) -> Result<RolloutRecord, BufferError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 10 && fields.len() != 12 {
        return Err(BufferError::Parse {
            line: line_no,
            message: format!("expected 10 or 12 fields, found {}", fields.len()),
        });
    }
    let err = |name: &str, value: &str| BufferError::Parse {
        line: line_no,
        message: format!("bad {name}: {value:?}"),
    };
    let int = |k: usize, name: &str| fields[k].parse::<u64>().map_err(|_| err(name, fields[k]));
    let real = |k: usize, name: &str| fields[k].parse::<f64>().map_err(|_| err(name, fields[k]));

    let is_correct = match fields[6] {
        "true" | "1" => true,
        "false" | "0" => false,
        other => return Err(err("is_correct", other)),
    };
    let (action, group_mean) = if fields.len() == 12 {
        let action = fields[10]
            .parse::<u32>()
            .map_err(|_| err("action", fields[10]))?;
        (action, real(11, "group_mean_reward")?)
    } else {
        (0, 0.0)
    };
    Ok(
        RolloutRecord::new(int(0, "rollout_id")?, int(3, "creation_step")?)
            .with_prompt(int(1, "prompt_id")?, int(2, "group_id")?)
            .with_policy_version(int(4, "policy_version")?)
            .with_reward(real(5, "reward")?, is_correct)
            .with_behavior_logprob(real(7, "behavior_logprob")?)
            .with_advantage(real(8, "advantage")?, group_mean)
            .with_action(action)
            .with_use_count(int(9, "use_count")?),
    )
}
