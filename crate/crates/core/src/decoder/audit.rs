use serde::Serialize;

use crate::params::{ParamGroup, ParamLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditScope {
    /// Only the decoding machinery ([`ParamGroup::Core`]).
    DecoderCore,
    /// Everything, including embedding, heads and the feature projection.
    Full,
}

impl AuditScope {
    fn includes(self, group: ParamGroup) -> bool {
        match self {
            AuditScope::DecoderCore => group == ParamGroup::Core,
            AuditScope::Full => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditItem {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
    pub group: ParamGroup,
    pub counted: bool,
}

/// Itemized parameter count. Every parameter of the layout is listed, with
/// `counted` telling whether it contributes to `total` under `scope`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamAudit {
    pub scope: AuditScope,
    pub total: usize,
    pub items: Vec<AuditItem>,
}

pub fn count_params(layout: &ParamLayout, scope: AuditScope) -> ParamAudit {
    let items: Vec<AuditItem> = layout
        .specs()
        .iter()
        .map(|s| AuditItem {
            name: s.name.clone(),
            shape: s.shape.clone(),
            count: s.numel(),
            group: s.group,
            counted: scope.includes(s.group),
        })
        .collect();
    let total = items.iter().filter(|i| i.counted).map(|i| i.count).sum();
    ParamAudit { scope, total, items }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{AttentionKind, AttentionParams};
    use crate::decoder::{DecoderConfig, DecoderKind, LstmDecoder, MemoryDecoder};
    use crate::params::Affine;

    #[test]
    fn single_projection_with_bias() {
        let mut layout = ParamLayout::new();
        Affine::declare(&mut layout, "p", 512, 512, ParamGroup::Core);
        assert_eq!(count_params(&layout, AuditScope::DecoderCore).total, 262_656);
    }

    #[test]
    fn single_attention_site() {
        let mut layout = ParamLayout::new();
        AttentionParams::declare(&mut layout, "a", 512, 512, 100, ParamGroup::Core);
        let audit = count_params(&layout, AuditScope::DecoderCore);
        let counts: Vec<usize> = audit.items.iter().map(|i| i.count).collect();
        assert_eq!(counts, vec![100, 51_200, 51_200, 100]);
        assert_eq!(audit.total, 102_600);
    }

    #[test]
    fn default_configuration_totals() {
        let config = DecoderConfig::default();
        let memory = MemoryDecoder::new(&config, 12_596, 2048).unwrap();
        let core = count_params(memory.layout(), AuditScope::DecoderCore);
        // 5 × (2·512² + 2·512 + 102,600) + 2 × 102,600 + (1024·512 + 512) + 2·512²
        assert_eq!(core.total, 4_393_848);

        let lstm = LstmDecoder::new(
            &DecoderConfig {
                decoder: DecoderKind::Lstm,
                ..config.clone()
            },
            12_596,
            2048,
        )
        .unwrap();
        let lstm_core = count_params(lstm.layout(), AuditScope::DecoderCore);
        // 4·512·(512 + 2048) + 4·512·512 + 4·512 + (100 + 100·512 + 100·2048 + 100)
        assert_eq!(lstm_core.total, 6_549_704);
        assert!(core.total < lstm_core.total);

        let full = count_params(memory.layout(), AuditScope::Full);
        let extra = 3 * (512 * 12_596 + 12_596) + 12_596 * 512 + 2048 * 512;
        assert_eq!(full.total, core.total + extra);
        assert!(full
            .items
            .iter()
            .any(|i| i.name == "aux_head_1.w" && !core.items.iter().find(|c| c.name == i.name).unwrap().counted));
    }

    #[test]
    fn dot_attention_has_no_attention_parameters() {
        let config = DecoderConfig {
            attention: AttentionKind::Dot,
            ..Default::default()
        };
        let memory = MemoryDecoder::new(&config, 100, 64).unwrap();
        assert!(memory.layout().specs().iter().all(|s| !s.name.contains("attn")));
        assert_eq!(
            count_params(memory.layout(), AuditScope::DecoderCore).total,
            4_393_848 - 7 * 102_600
        );
    }
}
