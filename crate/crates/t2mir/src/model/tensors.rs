//! Named-tensor traversal over the policy parameters. One canonical order
//! serves the optimizer, gradient flattening, and checkpoint serialization.
//! The key router is enumerated but marked non-trainable: it only moves via
//! the momentum update.

use super::policy::{BlockFfn, PolicyParams};
use crate::math::Real;
use crate::nn::FeedForward;

pub struct TensorRef<'a, F> {
    pub name: String,
    pub data: &'a Vec<F>,
    pub trainable: bool,
}

pub struct TensorMut<'a, F> {
    pub name: String,
    pub data: &'a mut Vec<F>,
    pub trainable: bool,
}

fn expert_refs<'a, F: Real>(out: &mut Vec<TensorRef<'a, F>>, prefix: &str, ex: &'a FeedForward<F>) {
    out.push(TensorRef { name: format!("{prefix}.up.w"), data: &ex.up.w, trainable: true });
    if let Some(b) = &ex.up.b {
        out.push(TensorRef { name: format!("{prefix}.up.b"), data: b, trainable: true });
    }
    out.push(TensorRef { name: format!("{prefix}.down.w"), data: &ex.down.w, trainable: true });
    if let Some(b) = &ex.down.b {
        out.push(TensorRef { name: format!("{prefix}.down.b"), data: b, trainable: true });
    }
}

fn expert_muts<'a, F: Real>(out: &mut Vec<TensorMut<'a, F>>, prefix: &str, ex: &'a mut FeedForward<F>) {
    out.push(TensorMut { name: format!("{prefix}.up.w"), data: &mut ex.up.w, trainable: true });
    if let Some(b) = &mut ex.up.b {
        out.push(TensorMut { name: format!("{prefix}.up.b"), data: b, trainable: true });
    }
    out.push(TensorMut { name: format!("{prefix}.down.w"), data: &mut ex.down.w, trainable: true });
    if let Some(b) = &mut ex.down.b {
        out.push(TensorMut { name: format!("{prefix}.down.b"), data: b, trainable: true });
    }
}

impl<F: Real> PolicyParams<F> {
    pub fn tensors(&self) -> Vec<TensorRef<'_, F>> {
        let mut out = Vec::new();
        out.push(TensorRef { name: "embed.state.w".into(), data: &self.embed.state.w, trainable: true });
        if let Some(b) = &self.embed.state.b {
            out.push(TensorRef { name: "embed.state.b".into(), data: b, trainable: true });
        }
        out.push(TensorRef { name: "embed.action.w".into(), data: &self.embed.action.w, trainable: true });
        if let Some(b) = &self.embed.action.b {
            out.push(TensorRef { name: "embed.action.b".into(), data: b, trainable: true });
        }
        out.push(TensorRef { name: "embed.reward.w".into(), data: &self.embed.reward.w, trainable: true });
        if let Some(b) = &self.embed.reward.b {
            out.push(TensorRef { name: "embed.reward.b".into(), data: b, trainable: true });
        }
        out.push(TensorRef { name: "embed.pos".into(), data: &self.embed.pos, trainable: true });
        for (i, block) in self.blocks.iter().enumerate() {
            let p = format!("block{i}");
            out.push(TensorRef { name: format!("{p}.ln1.gain"), data: &block.ln1.gain, trainable: true });
            out.push(TensorRef { name: format!("{p}.ln1.bias"), data: &block.ln1.bias, trainable: true });
            for (tag, lin) in [
                ("wq", &block.attn.wq),
                ("wk", &block.attn.wk),
                ("wv", &block.attn.wv),
                ("wo", &block.attn.wo),
            ] {
                out.push(TensorRef { name: format!("{p}.attn.{tag}.w"), data: &lin.w, trainable: true });
                if let Some(b) = &lin.b {
                    out.push(TensorRef { name: format!("{p}.attn.{tag}.b"), data: b, trainable: true });
                }
            }
            out.push(TensorRef { name: format!("{p}.ln2.gain"), data: &block.ln2.gain, trainable: true });
            out.push(TensorRef { name: format!("{p}.ln2.bias"), data: &block.ln2.bias, trainable: true });
            match &block.ffn {
                BlockFfn::Dense(ff) => {
                    out.push(TensorRef { name: format!("{p}.ff.up.w"), data: &ff.up.w, trainable: true });
                    if let Some(b) = &ff.up.b {
                        out.push(TensorRef { name: format!("{p}.ff.up.b"), data: b, trainable: true });
                    }
                    out.push(TensorRef { name: format!("{p}.ff.down.w"), data: &ff.down.w, trainable: true });
                    if let Some(b) = &ff.down.b {
                        out.push(TensorRef { name: format!("{p}.ff.down.b"), data: b, trainable: true });
                    }
                }
                BlockFfn::Moe(moe) => {
                    if let Some(tok) = &moe.token {
                        out.push(TensorRef { name: format!("{p}.token.router.w1"), data: &tok.router.w1, trainable: true });
                        out.push(TensorRef { name: format!("{p}.token.router.w2"), data: &tok.router.w2, trainable: true });
                        if let Some(nw) = &tok.router.noise_w {
                            out.push(TensorRef { name: format!("{p}.token.router.noise"), data: nw, trainable: true });
                        }
                        for (e, ex) in tok.experts.iter().enumerate() {
                            expert_refs(&mut out, &format!("{p}.token.expert{e}"), ex);
                        }
                    }
                    if let Some(task) = &moe.task {
                        out.push(TensorRef { name: format!("{p}.task.query.w1"), data: &task.state.query.w1, trainable: true });
                        out.push(TensorRef { name: format!("{p}.task.query.w2"), data: &task.state.query.w2, trainable: true });
                        out.push(TensorRef { name: format!("{p}.task.key.w1"), data: &task.state.key.w1, trainable: false });
                        out.push(TensorRef { name: format!("{p}.task.key.w2"), data: &task.state.key.w2, trainable: false });
                        out.push(TensorRef { name: format!("{p}.task.bilinear"), data: &task.state.bilinear, trainable: true });
                        for (e, ex) in task.experts.iter().enumerate() {
                            expert_refs(&mut out, &format!("{p}.task.expert{e}"), ex);
                        }
                    }
                    if let Some(cat) = &moe.cat {
                        out.push(TensorRef { name: format!("{p}.cat.w"), data: &cat.w, trainable: true });
                        if let Some(b) = &cat.b {
                            out.push(TensorRef { name: format!("{p}.cat.b"), data: b, trainable: true });
                        }
                    }
                }
            }
        }
        out.push(TensorRef { name: "ln_f.gain".into(), data: &self.ln_f.gain, trainable: true });
        out.push(TensorRef { name: "ln_f.bias".into(), data: &self.ln_f.bias, trainable: true });
        out.push(TensorRef { name: "head.w".into(), data: &self.head.w, trainable: true });
        if let Some(b) = &self.head.b {
            out.push(TensorRef { name: "head.b".into(), data: b, trainable: true });
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_, F>> {
        let mut out = Vec::new();
        out.push(TensorMut { name: "embed.state.w".into(), data: &mut self.embed.state.w, trainable: true });
        if let Some(b) = &mut self.embed.state.b {
            out.push(TensorMut { name: "embed.state.b".into(), data: b, trainable: true });
        }
        out.push(TensorMut { name: "embed.action.w".into(), data: &mut self.embed.action.w, trainable: true });
        if let Some(b) = &mut self.embed.action.b {
            out.push(TensorMut { name: "embed.action.b".into(), data: b, trainable: true });
        }
        out.push(TensorMut { name: "embed.reward.w".into(), data: &mut self.embed.reward.w, trainable: true });
        if let Some(b) = &mut self.embed.reward.b {
            out.push(TensorMut { name: "embed.reward.b".into(), data: b, trainable: true });
        }
        out.push(TensorMut { name: "embed.pos".into(), data: &mut self.embed.pos, trainable: true });
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let p = format!("block{i}");
            out.push(TensorMut { name: format!("{p}.ln1.gain"), data: &mut block.ln1.gain, trainable: true });
            out.push(TensorMut { name: format!("{p}.ln1.bias"), data: &mut block.ln1.bias, trainable: true });
            for (tag, lin) in [
                ("wq", &mut block.attn.wq),
                ("wk", &mut block.attn.wk),
                ("wv", &mut block.attn.wv),
                ("wo", &mut block.attn.wo),
            ] {
                out.push(TensorMut { name: format!("{p}.attn.{tag}.w"), data: &mut lin.w, trainable: true });
                if let Some(b) = &mut lin.b {
                    out.push(TensorMut { name: format!("{p}.attn.{tag}.b"), data: b, trainable: true });
                }
            }
            out.push(TensorMut { name: format!("{p}.ln2.gain"), data: &mut block.ln2.gain, trainable: true });
            out.push(TensorMut { name: format!("{p}.ln2.bias"), data: &mut block.ln2.bias, trainable: true });
            match &mut block.ffn {
                BlockFfn::Dense(ff) => {
                    out.push(TensorMut { name: format!("{p}.ff.up.w"), data: &mut ff.up.w, trainable: true });
                    if let Some(b) = &mut ff.up.b {
                        out.push(TensorMut { name: format!("{p}.ff.up.b"), data: b, trainable: true });
                    }
                    out.push(TensorMut { name: format!("{p}.ff.down.w"), data: &mut ff.down.w, trainable: true });
                    if let Some(b) = &mut ff.down.b {
                        out.push(TensorMut { name: format!("{p}.ff.down.b"), data: b, trainable: true });
                    }
                }
                BlockFfn::Moe(moe) => {
                    if let Some(tok) = &mut moe.token {
                        out.push(TensorMut { name: format!("{p}.token.router.w1"), data: &mut tok.router.w1, trainable: true });
                        out.push(TensorMut { name: format!("{p}.token.router.w2"), data: &mut tok.router.w2, trainable: true });
                        if let Some(nw) = &mut tok.router.noise_w {
                            out.push(TensorMut { name: format!("{p}.token.router.noise"), data: nw, trainable: true });
                        }
                        for (e, ex) in tok.experts.iter_mut().enumerate() {
                            expert_muts(&mut out, &format!("{p}.token.expert{e}"), ex);
                        }
                    }
                    if let Some(task) = &mut moe.task {
                        out.push(TensorMut { name: format!("{p}.task.query.w1"), data: &mut task.state.query.w1, trainable: true });
                        out.push(TensorMut { name: format!("{p}.task.query.w2"), data: &mut task.state.query.w2, trainable: true });
                        out.push(TensorMut { name: format!("{p}.task.key.w1"), data: &mut task.state.key.w1, trainable: false });
                        out.push(TensorMut { name: format!("{p}.task.key.w2"), data: &mut task.state.key.w2, trainable: false });
                        out.push(TensorMut { name: format!("{p}.task.bilinear"), data: &mut task.state.bilinear, trainable: true });
                        for (e, ex) in task.experts.iter_mut().enumerate() {
                            expert_muts(&mut out, &format!("{p}.task.expert{e}"), ex);
                        }
                    }
                    if let Some(cat) = &mut moe.cat {
                        out.push(TensorMut { name: format!("{p}.cat.w"), data: &mut cat.w, trainable: true });
                        if let Some(b) = &mut cat.b {
                            out.push(TensorMut { name: format!("{p}.cat.b"), data: b, trainable: true });
                        }
                    }
                }
            }
        }
        out.push(TensorMut { name: "ln_f.gain".into(), data: &mut self.ln_f.gain, trainable: true });
        out.push(TensorMut { name: "ln_f.bias".into(), data: &mut self.ln_f.bias, trainable: true });
        out.push(TensorMut { name: "head.w".into(), data: &mut self.head.w, trainable: true });
        if let Some(b) = &mut self.head.b {
            out.push(TensorMut { name: "head.b".into(), data: b, trainable: true });
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        PolicyParams {
            embed: super::policy::EmbedParams {
                state: self.embed.state.zeros_like(),
                action: self.embed.action.zeros_like(),
                reward: self.embed.reward.zeros_like(),
                pos: vec![F::zero(); self.embed.pos.len()],
            },
            blocks: self
                .blocks
                .iter()
                .map(|b| super::policy::BlockParams {
                    ln1: b.ln1.zeros_like(),
                    attn: b.attn.zeros_like(),
                    ln2: b.ln2.zeros_like(),
                    ffn: match &b.ffn {
                        BlockFfn::Dense(ff) => BlockFfn::Dense(ff.zeros_like()),
                        BlockFfn::Moe(m) => BlockFfn::Moe(super::policy::MoeBlock {
                            token: m.token.as_ref().map(|t| t.zeros_like()),
                            task: m.task.as_ref().map(|t| t.zeros_like()),
                            cat: m.cat.as_ref().map(|c| c.zeros_like()),
                        }),
                    },
                })
                .collect(),
            ln_f: self.ln_f.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// Flat copy of all trainable tensors in canonical order.
    pub fn flatten_trainable(&self) -> Vec<F> {
        let mut v = Vec::new();
        for t in self.tensors() {
            if t.trainable {
                v.extend_from_slice(t.data);
            }
        }
        v
    }

    pub fn trainable_len(&self) -> usize {
        self.tensors().iter().filter(|t| t.trainable).map(|t| t.data.len()).sum()
    }

    pub fn total_len(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Overwrite all trainable tensors from a flat slice in canonical order.
    pub fn set_trainable_from_flat(&mut self, flat: &[F]) {
        let mut off = 0;
        for t in self.tensors_mut() {
            if t.trainable {
                let n = t.data.len();
                t.data.copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        }
        debug_assert_eq!(off, flat.len());
    }

    /// self += alpha * other, trainable tensors only.
    pub fn add_scaled_trainable(&mut self, other: &Self, alpha: F) {
        let o = other.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(o.into_iter()) {
            debug_assert_eq!(dst.name, src.name);
            if dst.trainable {
                for (a, &b) in dst.data.iter_mut().zip(src.data.iter()) {
                    *a = *a + alpha * b;
                }
            }
        }
    }

    /// self += other over every tensor (gradient reduction).
    pub fn add_assign_all(&mut self, other: &Self) {
        let o = other.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(o.into_iter()) {
            for (a, &b) in dst.data.iter_mut().zip(src.data.iter()) {
                *a = *a + b;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::model::config::tests_support::tiny_config;
    use crate::model::PolicyModel;

    #[test]
    fn ref_and_mut_visitors_agree() {
        let mut model: PolicyModel<f64> = PolicyModel::init(tiny_config(), 1).unwrap();
        let refs: Vec<(String, usize, bool)> = model
            .params
            .tensors()
            .iter()
            .map(|t| (t.name.clone(), t.data.len(), t.trainable))
            .collect();
        let muts: Vec<(String, usize, bool)> = model
            .params
            .tensors_mut()
            .iter()
            .map(|t| (t.name.clone(), t.data.len(), t.trainable))
            .collect();
        assert_eq!(refs, muts);
        assert!(refs.iter().any(|(n, _, tr)| n.contains("task.key") && !tr));
        assert!(refs.iter().all(|(n, _, tr)| *tr || n.contains("task.key")));
    }
}
