//! Drafting straight from a conditional table.

use super::{build_tree, DraftConfig, Drafter, RoundContext, Stepper};
use crate::error::Result;
use crate::model::TabularModel;
use crate::rng::Rng;
use crate::tree::DraftTree;

struct TableStepper<'a> {
    table: &'a TabularModel,
    history: &'a [u32],
    calls: usize,
}

struct TableState {
    context: Vec<u32>,
    logits: Vec<f64>,
}

impl TableStepper<'_> {
    fn state(&mut self, context: Vec<u32>) -> Result<TableState> {
        let logits = self.table.next_logits(&context)?;
        Ok(TableState { context, logits })
    }
}

impl Stepper for TableStepper<'_> {
    type State = TableState;

    fn root(&mut self) -> Result<TableState> {
        self.calls += 1;
        // Only the last `order` tokens matter.
        let keep = self.history.len().saturating_sub(self.table.order());
        self.state(self.history[keep..].to_vec())
    }

    fn step(&mut self, parent: &TableState, tokens: &[u32], _depth: usize) -> Result<Vec<TableState>> {
        self.calls += 1;
        tokens
            .iter()
            .map(|&t| {
                let mut c = parent.context.clone();
                c.push(t);
                self.state(c)
            })
            .collect()
    }

    fn logits<'s>(&self, state: &'s TableState) -> &'s [f64] {
        &state.logits
    }

    fn feature(&self, _state: &TableState) -> Option<Vec<f64>> {
        None
    }

    fn calls(&self) -> usize {
        self.calls
    }
}

impl Drafter for TabularModel {
    fn draft_round(
        &self,
        ctx: &RoundContext<'_>,
        cfg: &DraftConfig,
        temperature: f64,
        rng: &mut Rng,
    ) -> Result<DraftTree> {
        let mut stepper = TableStepper { table: self, history: ctx.history, calls: 0 };
        build_tree(&mut stepper, ctx.pending(), cfg, temperature, ctx.max_depth, rng)
    }

    fn weight_bytes(&self) -> usize {
        0
    }
}
