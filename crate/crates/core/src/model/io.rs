use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{
    BlockId, BlockSpec, InstrSpec, ModelError, OutcomeSource, ProgramModel, SiteId,
    DEFAULT_ARCH_REGS,
};

pub const MODEL_FORMAT: u32 = 1;

fn default_regs() -> u8 {
    DEFAULT_ARCH_REGS
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: u32,
    #[serde(default = "default_regs")]
    arch_reg_count: u8,
    entry: BlockId,
    #[serde(default)]
    sources: BTreeMap<SiteId, OutcomeSource>,
    blocks: Vec<BlockSpec>,
}

impl From<&ProgramModel> for ModelFile {
    fn from(model: &ProgramModel) -> Self {
        ModelFile {
            format: MODEL_FORMAT,
            arch_reg_count: model.arch_reg_count(),
            entry: model.entry(),
            sources: model.sources().clone(),
            blocks: model
                .blocks()
                .iter()
                .map(|b| BlockSpec {
                    instrs: b
                        .instructions
                        .iter()
                        .map(|i| InstrSpec(i.class, i.dests, i.srcs, i.latency))
                        .collect(),
                    term: b.terminator,
                })
                .collect(),
        }
    }
}

pub fn save_model_string(model: &ProgramModel) -> String {
    let mut text = serde_json::to_string_pretty(&ModelFile::from(model))
        .expect("model serialization is infallible");
    text.push('\n');
    text
}

pub fn save_model<W: Write>(model: &ProgramModel, mut sink: W) -> Result<(), ModelError> {
    sink.write_all(save_model_string(model).as_bytes())?;
    Ok(())
}

pub fn load_model_str(text: &str) -> Result<ProgramModel, ModelError> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| ModelError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if file.format != MODEL_FORMAT {
        return Err(ModelError::Field {
            field: "format".into(),
            message: format!("unsupported format {}, expected {MODEL_FORMAT}", file.format),
        });
    }
    Ok(ProgramModel::new(
        file.arch_reg_count,
        file.entry,
        file.blocks,
        file.sources,
    ))
}

pub fn load_model<R: Read>(mut source: R) -> Result<ProgramModel, ModelError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    load_model_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InstrSpec, ModelBuilder, Terminator};

    #[test]
    fn single_block_round_trip() {
        let mut b = ModelBuilder::new(16);
        b.block(
            vec![InstrSpec::alu(&[1], &[2]), InstrSpec::nop()],
            Terminator::Halt,
        );
        let model = b.build();
        let text = save_model_string(&model);
        assert_eq!(load_model_str(&text).unwrap(), model);
    }

    #[test]
    fn unknown_latency_tag_is_named() {
        let text = r#"{"format":1,"entry":0,"blocks":[
            {"instrs":[["alu",[1],[],{"warp":3}]],"term":{"kind":"halt"}}]}"#;
        match load_model_str(text) {
            Err(ModelError::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("warp"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_format_version_rejected() {
        let text = r#"{"format":2,"entry":0,"blocks":[]}"#;
        assert!(matches!(
            load_model_str(text),
            Err(ModelError::Field { ref field, .. }) if field == "format"
        ));
    }
}
