use ndarray::{s, Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};
use serde::{Deserialize, Serialize};

use crate::nn::{init_bias, init_uniform, softmax, Parameters};
use crate::rng::{stream, Stream};
use crate::sensing::{SpatioTemporalGraph, ROBOT_FEATURES};

/// Per-pedestrian node width: Δp (2), Δv (2), cooperation label.
pub const PED_FEATURES: usize = 5;

const POSITION_SCALE: f64 = 6.0;
const REL_POSITION_SCALE: f64 = 5.0;
const REL_VELOCITY_SCALE: f64 = 2.0;

/// Network input derived from an observation graph, with fixed scaling.
/// Temporal edges enter only through the relative velocities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyInput {
    pub robot: [f64; ROBOT_FEATURES],
    pub peds: Vec<[f64; PED_FEATURES]>,
}

impl PolicyInput {
    pub fn from_graph(g: &SpatioTemporalGraph) -> Self {
        let r = g.robot_node;
        let robot = [
            r[0] / POSITION_SCALE,
            r[1] / POSITION_SCALE,
            r[2],
            r[3],
            r[4] / std::f64::consts::PI,
            r[5] / POSITION_SCALE,
            r[6] / POSITION_SCALE,
            r[7],
            r[8],
        ];
        let peds = g
            .ped_nodes
            .iter()
            .map(|o| {
                [
                    o.rel_position.x / REL_POSITION_SCALE,
                    o.rel_position.y / REL_POSITION_SCALE,
                    o.rel_velocity.x / REL_VELOCITY_SCALE,
                    o.rel_velocity.y / REL_VELOCITY_SCALE,
                    o.coop_label as f64,
                ]
            })
            .collect();
        Self { robot, peds }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDims {
    /// Encoder width.
    pub d: usize,
    pub h_max: usize,
}

impl Default for PolicyDims {
    fn default() -> Self {
        Self {
            d: 64,
            h_max: super::H_MAX,
        }
    }
}

impl PolicyDims {
    /// Header dims of the parameter file: `[robot_in, ped_in, d, h_max]`.
    pub fn to_header(self) -> Vec<u64> {
        vec![ROBOT_FEATURES as u64, PED_FEATURES as u64, self.d as u64, self.h_max as u64]
    }

    pub fn from_header(h: &[u64]) -> Option<Self> {
        let &[r, p, d, hm] = h else { return None };
        (r == ROBOT_FEATURES as u64 && p == PED_FEATURES as u64 && (1..=4096).contains(&d) && (1..=1024).contains(&hm)).then_some(Self {
            d: d as usize,
            h_max: hm as usize,
        })
    }
}

/// Horizon policy: two-layer tanh encoders for the robot and pedestrian
/// nodes, attention pooling of pedestrians with the robot as query, and
/// policy/value heads on `[robot ‖ context]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub dims: PolicyDims,
    pub wp1: Array2<f64>,
    pub bp1: Array1<f64>,
    pub wp2: Array2<f64>,
    pub bp2: Array1<f64>,
    pub wr1: Array2<f64>,
    pub br1: Array1<f64>,
    pub wr2: Array2<f64>,
    pub br2: Array1<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub w_pi: Array2<f64>,
    pub b_pi: Array1<f64>,
    pub w_val: Array2<f64>,
    pub b_val: Array1<f64>,
}

macro_rules! policy_tensors {
    ($s:expr, $view:ident) => {
        vec![
            $s.wp1.$view().into_dyn(),
            $s.bp1.$view().into_dyn(),
            $s.wp2.$view().into_dyn(),
            $s.bp2.$view().into_dyn(),
            $s.wr1.$view().into_dyn(),
            $s.br1.$view().into_dyn(),
            $s.wr2.$view().into_dyn(),
            $s.br2.$view().into_dyn(),
            $s.wq.$view().into_dyn(),
            $s.wk.$view().into_dyn(),
            $s.wv.$view().into_dyn(),
            $s.w_pi.$view().into_dyn(),
            $s.b_pi.$view().into_dyn(),
            $s.w_val.$view().into_dyn(),
            $s.b_val.$view().into_dyn(),
        ]
    };
}

impl Parameters for PolicyParams {
    fn tensors(&self) -> Vec<ArrayViewD<'_, f64>> {
        policy_tensors!(self, view)
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        policy_tensors!(self, view_mut)
    }
}

impl PolicyParams {
    pub fn zeros(dims: PolicyDims) -> Self {
        let PolicyDims { d, h_max } = dims;
        Self {
            dims,
            wp1: Array2::zeros((PED_FEATURES, d)),
            bp1: Array1::zeros(d),
            wp2: Array2::zeros((d, d)),
            bp2: Array1::zeros(d),
            wr1: Array2::zeros((ROBOT_FEATURES, d)),
            br1: Array1::zeros(d),
            wr2: Array2::zeros((d, d)),
            br2: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            w_pi: Array2::zeros((2 * d, h_max)),
            b_pi: Array1::zeros(h_max),
            w_val: Array2::zeros((2 * d, 1)),
            b_val: Array1::zeros(1),
        }
    }

    /// Uniform `±1/√fan_in` initialization; the policy head starts at zero
    /// so the initial distribution is uniform.
    pub fn init(dims: PolicyDims, seed: u64) -> Self {
        let mut rng = stream(seed, Stream::Init);
        let r = &mut rng;
        let PolicyDims { d, h_max } = dims;
        Self {
            dims,
            wp1: init_uniform(r, PED_FEATURES, d),
            bp1: init_bias(r, PED_FEATURES, d),
            wp2: init_uniform(r, d, d),
            bp2: init_bias(r, d, d),
            wr1: init_uniform(r, ROBOT_FEATURES, d),
            br1: init_bias(r, ROBOT_FEATURES, d),
            wr2: init_uniform(r, d, d),
            br2: init_bias(r, d, d),
            wq: init_uniform(r, d, d),
            wk: init_uniform(r, d, d),
            wv: init_uniform(r, d, d),
            w_pi: Array2::zeros((2 * d, h_max)),
            b_pi: Array1::zeros(h_max),
            w_val: init_uniform(r, 2 * d, 1),
            b_val: Array1::zeros(1),
        }
    }
}

/// Activations retained for the backward pass.
pub struct PolicyCache {
    x_robot: Array2<f64>,
    r1: Array2<f64>,
    r2: Array2<f64>,
    x_peds: Array2<f64>,
    p1: Array2<f64>,
    p2: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    alpha: Vec<f64>,
    features: Array2<f64>,
}

pub struct PolicyOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub value: f64,
    pub features: Vec<f64>,
}

fn mlp2(x: &Array2<f64>, w1: &Array2<f64>, b1: &Array1<f64>, w2: &Array2<f64>, b2: &Array1<f64>) -> (Array2<f64>, Array2<f64>) {
    let a1 = (x.dot(w1) + b1).mapv(f64::tanh);
    let a2 = (a1.dot(w2) + b2).mapv(f64::tanh);
    (a1, a2)
}

/// Observation features `[robot encoding ‖ pooled pedestrian context]`.
/// With no pedestrian the context is zero.
pub fn encode_observation(params: &PolicyParams, input: &PolicyInput) -> (Array2<f64>, PolicyCache) {
    let d = params.dims.d;
    let x_robot = Array2::from_shape_vec((1, ROBOT_FEATURES), input.robot.to_vec()).expect("shape");
    let (r1, r2) = mlp2(&x_robot, &params.wr1, &params.br1, &params.wr2, &params.br2);
    let m = input.peds.len();
    let x_peds = Array2::from_shape_fn((m, PED_FEATURES), |(i, j)| input.peds[i][j]);
    let (p1, p2) = mlp2(&x_peds, &params.wp1, &params.bp1, &params.wp2, &params.bp2);
    let q = r2.dot(&params.wq);
    let k = p2.dot(&params.wk);
    let v = p2.dot(&params.wv);
    let mut features = Array2::zeros((1, 2 * d));
    features.slice_mut(s![.., ..d]).assign(&r2);
    let alpha = if m > 0 {
        let scores: Vec<f64> = k.dot(&q.row(0)).iter().map(|s| s / (d as f64).sqrt()).collect();
        let alpha = softmax(&scores);
        let ctx = Array1::from(alpha.clone()).dot(&v);
        features.slice_mut(s![0, d..]).assign(&ctx);
        alpha
    } else {
        Vec::new()
    };
    (
        features.clone(),
        PolicyCache {
            x_robot,
            r1,
            r2,
            x_peds,
            p1,
            p2,
            q,
            k,
            v,
            alpha,
            features,
        },
    )
}

/// Categorical distribution over horizons `1..=h_max` and the state value.
pub fn policy_forward(params: &PolicyParams, input: &PolicyInput) -> (PolicyOutput, PolicyCache) {
    let (features, cache) = encode_observation(params, input);
    let logits = (features.dot(&params.w_pi) + &params.b_pi).row(0).to_vec();
    let value = (features.dot(&params.w_val) + &params.b_val)[[0, 0]];
    let probs = softmax(&logits);
    (
        PolicyOutput {
            logits,
            probs,
            value,
            features: features.row(0).to_vec(),
        },
        cache,
    )
}

fn mlp2_backward(
    x: &Array2<f64>,
    a1: &Array2<f64>,
    a2: &Array2<f64>,
    da2: Array2<f64>,
    w2: &Array2<f64>,
    gw1: &mut Array2<f64>,
    gb1: &mut Array1<f64>,
    gw2: &mut Array2<f64>,
    gb2: &mut Array1<f64>,
) {
    let dz2 = da2 * &a2.mapv(|v| 1.0 - v * v);
    *gw2 += &a1.t().dot(&dz2);
    *gb2 += &dz2.sum_axis(Axis(0));
    let dz1 = dz2.dot(&w2.t()) * &a1.mapv(|v| 1.0 - v * v);
    *gw1 += &x.t().dot(&dz1);
    *gb1 += &dz1.sum_axis(Axis(0));
}

/// Accumulates into `grads` the gradient for upstream derivatives
/// `dlogits` and `dvalue`.
pub fn policy_backward(params: &PolicyParams, cache: &PolicyCache, dlogits: &[f64], dvalue: f64, grads: &mut PolicyParams) {
    let d = params.dims.d;
    let dl = Array2::from_shape_vec((1, dlogits.len()), dlogits.to_vec()).expect("shape");
    let dv = Array2::from_elem((1, 1), dvalue);
    grads.w_pi += &cache.features.t().dot(&dl);
    grads.b_pi += &dl.row(0);
    grads.w_val += &cache.features.t().dot(&dv);
    grads.b_val[0] += dvalue;
    let dfeat = dl.dot(&params.w_pi.t()) + dv.dot(&params.w_val.t());
    let mut dr2 = dfeat.slice(s![.., ..d]).to_owned();

    let m = cache.alpha.len();
    if m > 0 {
        let dctx = dfeat.slice(s![0, d..]).to_owned();
        let alpha = Array1::from(cache.alpha.clone());
        // ctx = αᵀV, α = softmax(K q / √d)
        let dvv: Array2<f64> = alpha.view().insert_axis(Axis(1)).dot(&dctx.view().insert_axis(Axis(0)));
        let dalpha = cache.v.dot(&dctx);
        let dot = alpha.dot(&dalpha);
        let dscores: Array1<f64> = (&alpha * &(dalpha - dot)) / (d as f64).sqrt();
        let dq = dscores.view().insert_axis(Axis(0)).dot(&cache.k);
        let dk = dscores.view().insert_axis(Axis(1)).dot(&cache.q);
        grads.wq += &cache.r2.t().dot(&dq);
        grads.wk += &cache.p2.t().dot(&dk);
        grads.wv += &cache.p2.t().dot(&dvv);
        dr2 += &dq.dot(&params.wq.t());
        let dp2 = dk.dot(&params.wk.t()) + dvv.dot(&params.wv.t());
        mlp2_backward(
            &cache.x_peds,
            &cache.p1,
            &cache.p2,
            dp2,
            &params.wp2,
            &mut grads.wp1,
            &mut grads.bp1,
            &mut grads.wp2,
            &mut grads.bp2,
        );
    }
    mlp2_backward(
        &cache.x_robot,
        &cache.r1,
        &cache.r2,
        dr2,
        &params.wr2,
        &mut grads.wr1,
        &mut grads.br1,
        &mut grads.wr2,
        &mut grads.br2,
    );
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::Rng;
    use rand::{Rng as _, SeedableRng};

    pub(crate) fn random_input(rng: &mut Rng, m: usize) -> PolicyInput {
        let mut robot = [0.0; ROBOT_FEATURES];
        robot.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        PolicyInput {
            robot,
            peds: (0..m)
                .map(|_| {
                    let mut p = [0.0; PED_FEATURES];
                    p.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
                    p[4] = rng.gen_range(0..2) as f64;
                    p
                })
                .collect(),
        }
    }

    #[test]
    fn empty_pool_is_zero_context() {
        let p = PolicyParams::init(PolicyDims::default(), 1);
        let mut rng = Rng::seed_from_u64(0);
        let input = random_input(&mut rng, 0);
        let (f, _) = encode_observation(&p, &input);
        assert!(f.slice(s![0, 64..]).iter().all(|&v| v == 0.0));
        assert!(f.slice(s![0, ..64]).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn pooling_permutation_invariant_not_duplicate_invariant() {
        let p = PolicyParams::init(PolicyDims::default(), 2);
        let mut rng = Rng::seed_from_u64(1);
        let input = random_input(&mut rng, 3);
        let (a, _) = encode_observation(&p, &input);
        let mut rev = input.clone();
        rev.peds.reverse();
        let (b, _) = encode_observation(&p, &rev);
        assert!((&a - &b).iter().all(|v| v.abs() < 1e-12));
        let mut dup = input.clone();
        dup.peds.push(input.peds[0]);
        let (c, _) = encode_observation(&p, &dup);
        assert!((&a - &c).iter().any(|v| v.abs() > 1e-6));
    }

    #[test]
    fn zero_head_is_uniform() {
        let mut p = PolicyParams::init(PolicyDims::default(), 3);
        p.w_val.fill(0.0);
        p.b_val[0] = 0.7;
        let mut rng = Rng::seed_from_u64(2);
        let (out, _) = policy_forward(&p, &random_input(&mut rng, 4));
        assert!(out.probs.iter().all(|&q| (q - 0.1).abs() < 1e-15));
        assert_eq!(out.value, 0.7);
        // logits (1, …, 1) + e_k → argmax k
        p.b_pi.fill(1.0);
        p.b_pi[6] += 1.0;
        let (out, _) = policy_forward(&p, &random_input(&mut rng, 2));
        let argmax = out.probs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax, 6);
    }
}
