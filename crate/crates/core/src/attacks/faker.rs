use rand::Rng;

use super::{AttackMode, ConstraintCheck, PoisonResult};
use crate::defenses::{flame_admission_from_distances, DefenseKind, DefenseParams};
use crate::error::{Error, Result};
use crate::model::{apply_scalars, expand_group_scalars, GroupPartition, ModelVector, ScalarVector};
use crate::similarity::{cosine_of, distance_of, norm_of, SIMILARITY_TOL};

/// Range the fixed scalars of the cosine-type constructions are drawn from.
pub const FLTRUST_FIXED_RANGE: (f64, f64) = (0.5, 1.5);

/// The scalar solved in closed form; group 0 is the output layer by default.
const FREE_GROUP: usize = 0;
const POSITIVE_FLOOR: f64 = 1e-12;
const PERTURB_TOL: f64 = 1e-12;
const MAX_RESAMPLES: usize = 16;
const SHRINK_STEPS: usize = 30;

/// Per-group view of a model: `ψ_t = Σ w_j²` and `n_t` over group `t`.
struct Groups {
    psi: Vec<f64>,
    sizes: Vec<f64>,
    total: f64,
}

impl Groups {
    fn of(w: &ModelVector, p: &GroupPartition) -> Result<Self> {
        if p.dim() != w.dim() {
            return Err(Error::DimensionMismatch {
                expected: w.dim(),
                actual: p.dim(),
            });
        }
        let psi = p.group_square_sums(w.values());
        let total: f64 = psi.iter().sum();
        if total == 0.0 {
            return Err(Error::ZeroVector);
        }
        let sizes = p.group_sizes().into_iter().map(|s| s as f64).collect();
        Ok(Self { psi, sizes, total })
    }

    fn len(&self) -> usize {
        self.psi.len()
    }

    /// `(Σ ψα, Σ ψα², Σ nα)` over every group.
    fn moments(&self, alphas: &[f64]) -> (f64, f64, f64) {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let mut sn = 0.0;
        for ((&psi, &n), &a) in self.psi.iter().zip(&self.sizes).zip(alphas) {
            s1 += psi * a;
            s2 += psi * a * a;
            sn += n * a;
        }
        (s1, s2, sn)
    }

    fn max_fixed_psi(&self, free: usize) -> f64 {
        self.psi
            .iter()
            .enumerate()
            .filter(|&(t, _)| t != free)
            .map(|(_, &v)| v)
            .fold(0.0, f64::max)
    }
}

fn assemble(w: &ModelVector, p: &GroupPartition, alphas: &[f64]) -> Result<(ModelVector, ScalarVector)> {
    let scalars = expand_group_scalars(alphas, p)?;
    let poisoned = apply_scalars(w, &scalars)?;
    Ok((poisoned, scalars))
}

fn scalar_checks(alphas: &[f64]) -> Vec<ConstraintCheck> {
    let min = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = alphas.iter().map(|a| (a - 1.0).abs()).fold(0.0, f64::max);
    vec![
        ConstraintCheck::new("scalars_positive", min, 0.0, min > 0.0),
        ConstraintCheck::new("scalars_perturb", spread, PERTURB_TOL, spread > PERTURB_TOL),
    ]
}

fn draw_fixed<R: Rng + ?Sized>(t: usize, lo: f64, hi: f64, rng: &mut R) -> Vec<f64> {
    (0..t)
        .map(|g| if g == FREE_GROUP { 1.0 } else { rng.random_range(lo..hi) })
        .collect()
}

/// Roots of the free-scalar stationarity condition for the cosine-times-norm
/// objective `(λ + aα)(γ + α) / (β + aα²)`, larger root first.
///
/// `γ` counts the fixed groups' scalar mass in units of the free group's
/// size, so the objective stays `s̄ · Σ α` for groups of any size.
pub fn fltrust_free_scalar(psi: &[f64], sizes: &[f64], alphas: &[f64], free: usize) -> Option<(f64, f64)> {
    let a = psi[free];
    let mut lambda = 0.0;
    let mut beta = 0.0;
    let mut mass = 0.0;
    for t in (0..psi.len()).filter(|&t| t != free) {
        lambda += psi[t] * alphas[t];
        beta += psi[t] * alphas[t] * alphas[t];
        mass += sizes[t] * alphas[t];
    }
    let gamma = mass / sizes[free];
    let den = a * (lambda + a * gamma);
    let rad = a * (lambda * lambda + a * beta) * (a * gamma * gamma + beta);
    if !(a > 0.0 && den > 0.0 && rad >= 0.0) {
        return None;
    }
    let base = a * (beta - lambda * gamma);
    Some(((base + rad.sqrt()) / den, (base - rad.sqrt()) / den))
}

/// Cosine-times-norm objective at group level.
fn trust_objective(g: &Groups, alphas: &[f64]) -> f64 {
    let (s1, s2, sn) = g.moments(alphas);
    s1 / s2 * sn
}

/// Group scalars of the cosine-type construction for given fixed scalars.
fn fltrust_alphas(g: &Groups, fixed: &[f64]) -> (Vec<f64>, ConstraintCheck) {
    let mut alphas = fixed.to_vec();
    alphas[FREE_GROUP] = 1.0;
    if g.len() < 2 {
        return (alphas, ConstraintCheck::new("free_root", f64::NAN, 0.0, false));
    }
    match fltrust_free_scalar(&g.psi, &g.sizes, &alphas, FREE_GROUP) {
        Some((plus, minus)) => {
            let mut best = f64::NAN;
            let mut best_f = f64::NEG_INFINITY;
            for r in [plus, minus] {
                if r > 0.0 {
                    alphas[FREE_GROUP] = r;
                    let f = trust_objective(g, &alphas);
                    if f > best_f {
                        best_f = f;
                        best = r;
                    }
                }
            }
            if best.is_nan() {
                alphas[FREE_GROUP] = 1.0;
                (alphas, ConstraintCheck::new("free_root", plus, 0.0, false))
            } else {
                alphas[FREE_GROUP] = best;
                let other = if best == plus { minus } else { plus };
                (alphas, ConstraintCheck::new("other_root", other, 0.0, true))
            }
        }
        None => (alphas, ConstraintCheck::new("free_root", f64::NAN, 0.0, false)),
    }
}

fn cosine_check(poisoned: &ModelVector, w: &ModelVector) -> ConstraintCheck {
    let c = cosine_of(poisoned.values(), w.values()).unwrap_or(0.0);
    ConstraintCheck::new("cosine_positive", c, 0.0, c > 0.0)
}

/// FLTrust construction with explicit fixed scalars (`fixed[0]` is ignored).
pub fn faker_fltrust_with(w: &ModelVector, p: &GroupPartition, fixed: &[f64]) -> Result<PoisonResult> {
    let g = Groups::of(w, p)?;
    check_len(fixed, g.len())?;
    let (alphas, root) = fltrust_alphas(&g, fixed);
    let (poisoned, scalars) = assemble(w, p, &alphas)?;
    let mut checks = scalar_checks(&alphas);
    checks.push(cosine_check(&poisoned, w));
    checks.push(root);
    let f = trust_objective(&g, &alphas);
    Ok(PoisonResult::from_checks(poisoned, Some(scalars), f, checks, 1))
}

/// Maximizes `C(w̄,w)·L(w)/L(w̄) · Σα` over the free group with the other
/// groups drawn from [`FLTRUST_FIXED_RANGE`].
pub fn faker_fltrust<R: Rng + ?Sized>(w: &ModelVector, p: &GroupPartition, rng: &mut R) -> Result<PoisonResult> {
    let (lo, hi) = FLTRUST_FIXED_RANGE;
    let fixed = draw_fixed(p.num_groups(), lo, hi, rng);
    faker_fltrust_with(w, p, &fixed)
}

fn check_len(fixed: &[f64], t: usize) -> Result<()> {
    if fixed.len() != t {
        return Err(Error::DimensionMismatch {
            expected: t,
            actual: fixed.len(),
        });
    }
    if let Some((index, &value)) = fixed.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::NonPositiveScalar { index, value });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrumSetting {
    pub mode: AttackMode,
    pub n: usize,
    pub m: usize,
    pub margin: f64,
}

/// Distance budget: `E(w_g, w)`, widened by `(n−m−1)/(n−2m−1)` when the
/// attackers cooperate.
pub fn krum_budget(distance: f64, s: &KrumSetting) -> Result<f64> {
    match s.mode {
        AttackMode::Single => Ok(distance),
        AttackMode::Cooperative => {
            if s.n <= 2 * s.m + 1 {
                return Err(Error::Config {
                    path: "attack.mode".into(),
                    message: format!("cooperative Krum budget needs n > 2m+1 (n={}, m={})", s.n, s.m),
                });
            }
            Ok(distance * (s.n - s.m - 1) as f64 / (s.n - 2 * s.m - 1) as f64)
        }
    }
}

fn krum_alphas(g: &Groups, fixed: &[f64], budget: f64, margin: f64) -> Option<Vec<f64>> {
    let mut alphas = fixed.to_vec();
    let spent: f64 = (0..g.len())
        .filter(|&t| t != FREE_GROUP)
        .map(|t| (alphas[t] - 1.0).powi(2) * g.psi[t])
        .sum();
    let rest = budget * budget - spent;
    if !(rest >= 0.0) || g.psi[FREE_GROUP] == 0.0 {
        return None;
    }
    alphas[FREE_GROUP] = 1.0 + margin * (rest / g.psi[FREE_GROUP]).sqrt();
    Some(alphas)
}

fn krum_result(
    w: &ModelVector,
    p: &GroupPartition,
    alphas: &[f64],
    budget: f64,
    iterations: usize,
) -> Result<PoisonResult> {
    let g = Groups::of(w, p)?;
    let (poisoned, scalars) = assemble(w, p, alphas)?;
    let d = distance_of(poisoned.values(), w.values());
    let mut checks = scalar_checks(alphas);
    checks.push(ConstraintCheck::new("distance_below_bound", d, budget, d < budget));
    checks.push(ConstraintCheck::new("distance_positive", d, 0.0, d > 0.0));
    let (_, _, sn) = g.moments(alphas);
    Ok(PoisonResult::from_checks(poisoned, Some(scalars), d * sn, checks, iterations))
}

/// Krum construction with explicit fixed scalars.
pub fn faker_krum_with(
    w: &ModelVector,
    w_g: &ModelVector,
    p: &GroupPartition,
    s: &KrumSetting,
    fixed: &[f64],
) -> Result<PoisonResult> {
    w.check_dim(w_g)?;
    let g = Groups::of(w, p)?;
    check_len(fixed, g.len())?;
    let budget = krum_budget(distance_of(w.values(), w_g.values()), s)?;
    let mut alphas = fixed.to_vec();
    alphas[FREE_GROUP] = 1.0;
    let alphas = krum_alphas(&g, &alphas, budget, s.margin).unwrap_or(alphas);
    krum_result(w, p, &alphas, budget, 1)
}

/// Pushes the free scalar to `margin` × the largest value keeping
/// `E(w̄, w)` under the budget.
///
/// Fixed scalars are drawn symmetrically in `[1−b, 1+b]` (floored above 0)
/// with `b = budget / √((T−1)·max ψ)`, which keeps the remaining budget
/// non-negative.
pub fn faker_krum<R: Rng + ?Sized>(
    w: &ModelVector,
    w_g: &ModelVector,
    p: &GroupPartition,
    s: &KrumSetting,
    rng: &mut R,
) -> Result<PoisonResult> {
    w.check_dim(w_g)?;
    let g = Groups::of(w, p)?;
    let t = g.len();
    let budget = krum_budget(distance_of(w.values(), w_g.values()), s)?;
    let ones = vec![1.0; t];
    if budget == 0.0 {
        return krum_result(w, p, &ones, budget, 1);
    }
    let max_psi = g.max_fixed_psi(FREE_GROUP);
    let b = if t > 1 && max_psi > 0.0 {
        budget / ((t - 1) as f64 * max_psi).sqrt()
    } else {
        0.0
    };
    let lo = (1.0 - b).max(POSITIVE_FLOOR);
    let hi = 1.0 + b;
    for attempt in 1..=MAX_RESAMPLES {
        let fixed = if b > 0.0 { draw_fixed(t, lo, hi, rng) } else { ones.clone() };
        if let Some(alphas) = krum_alphas(&g, &fixed, budget, s.margin) {
            return krum_result(w, p, &alphas, budget, attempt);
        }
    }
    krum_result(w, p, &ones, budget, MAX_RESAMPLES)
}

/// Free scalar restoring `L(w̄) = upper`, floored above zero.
pub fn normclip_free_scalar(psi: &[f64], alphas: &[f64], free: usize, upper: f64) -> f64 {
    let used: f64 = (0..psi.len())
        .filter(|&t| t != free)
        .map(|t| alphas[t] * alphas[t] * psi[t])
        .sum();
    ((upper * upper - used) / psi[free]).max(0.0).sqrt().max(POSITIVE_FLOOR)
}

/// Norm-clipping construction with explicit fixed scalars.
pub fn faker_normclip_with(
    w: &ModelVector,
    p: &GroupPartition,
    upper: f64,
    fixed: &[f64],
) -> Result<PoisonResult> {
    let g = Groups::of(w, p)?;
    check_len(fixed, g.len())?;
    if !(upper > 0.0) {
        return Err(Error::Config {
            path: "norm_upper".into(),
            message: format!("must be positive, got {upper}"),
        });
    }
    if g.psi[FREE_GROUP] == 0.0 {
        return Err(Error::AttackFailed("free group is all zeros".into()));
    }
    let mut alphas = fixed.to_vec();
    alphas[FREE_GROUP] = normclip_free_scalar(&g.psi, &alphas, FREE_GROUP, upper);
    let (poisoned, scalars) = assemble(w, p, &alphas)?;
    let norm = norm_of(poisoned.values());
    let ratio = norm / upper;
    let mut checks = scalar_checks(&alphas);
    checks.push(ConstraintCheck::new(
        "norm_at_upper",
        ratio,
        1.0,
        (ratio - 1.0).abs() <= SIMILARITY_TOL,
    ));
    let (_, _, sn) = g.moments(&alphas);
    let f = norm / g.total.sqrt() * sn;
    Ok(PoisonResult::from_checks(poisoned, Some(scalars), f, checks, 1))
}

/// Keeps `L(w̄)` at the assumed upper bound while raising `Σα`: fixed
/// scalars from `(0, √(U²/((T−1)·max ψ))]`, free scalar in closed form.
pub fn faker_normclip<R: Rng + ?Sized>(
    w: &ModelVector,
    p: &GroupPartition,
    upper: f64,
    rng: &mut R,
) -> Result<PoisonResult> {
    let g = Groups::of(w, p)?;
    let t = g.len();
    let max_psi = g.max_fixed_psi(FREE_GROUP);
    let fixed: Vec<f64> = if t > 1 && max_psi > 0.0 {
        let bound = (upper * upper / ((t - 1) as f64 * max_psi)).sqrt();
        (0..t)
            .map(|k| {
                if k == FREE_GROUP {
                    1.0
                } else {
                    bound * (1.0 - rng.random::<f64>())
                }
            })
            .collect()
    } else {
        vec![1.0; t]
    };
    faker_normclip_with(w, p, upper, &fixed)
}

/// Whether FLAME's clustering admits a submission at cosine `c` to `n−1`
/// identical copies of the reference.
fn admitted_among_copies(c: f64, n: usize, params: &DefenseParams) -> bool {
    let d = 1.0 - c;
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j || (i > 0 && j > 0) { 0.0 } else { d })
                .collect()
        })
        .collect();
    flame_admission_from_distances(&dist, params)[0]
}

/// FLTrust construction pulled toward `α = 1` until FLAME's clustering
/// admits it against `n−1` copies of `w`. Bisection on the shrink factor.
pub fn faker_flame<R: Rng + ?Sized>(
    w: &ModelVector,
    p: &GroupPartition,
    n: usize,
    params: &DefenseParams,
    rng: &mut R,
) -> Result<PoisonResult> {
    if n < 3 {
        return Err(Error::TooFewClients { needed: 3, actual: n });
    }
    let g = Groups::of(w, p)?;
    let (lo, hi) = FLTRUST_FIXED_RANGE;
    let fixed = draw_fixed(g.len(), lo, hi, rng);
    let (target, root) = fltrust_alphas(&g, &fixed);
    let shrunk = |s: f64| -> Vec<f64> { target.iter().map(|a| 1.0 + s * (a - 1.0)).collect() };
    let cosine = |alphas: &[f64]| {
        let (s1, s2, _) = g.moments(alphas);
        s1 / (s2 * g.total).sqrt()
    };

    let mut steps = 0;
    let s = if admitted_among_copies(cosine(&target), n, params) {
        1.0
    } else {
        let (mut ok, mut bad) = (0.0, 1.0);
        while steps < SHRINK_STEPS {
            steps += 1;
            let mid = 0.5 * (ok + bad);
            if admitted_among_copies(cosine(&shrunk(mid)), n, params) {
                ok = mid;
            } else {
                bad = mid;
            }
        }
        ok
    };
    let alphas = shrunk(s);
    let (poisoned, scalars) = assemble(w, p, &alphas)?;
    let c = cosine_of(poisoned.values(), w.values()).unwrap_or(0.0);
    let mut checks = scalar_checks(&alphas);
    checks.push(ConstraintCheck::new("shrink", s, 0.0, s > 0.0));
    checks.push(ConstraintCheck::new(
        "flame_admitted",
        1.0 - c,
        params.flame_min_link,
        admitted_among_copies(c, n, params),
    ));
    checks.push(root);
    let f = trust_objective(&g, &alphas);
    Ok(PoisonResult::from_checks(poisoned, Some(scalars), f, checks, steps.max(1)))
}

/// DiverseFL construction with explicit fixed scalars.
pub fn faker_diversefl_with(
    w: &ModelVector,
    p: &GroupPartition,
    kappa: f64,
    fixed: &[f64],
) -> Result<PoisonResult> {
    let g = Groups::of(w, p)?;
    check_len(fixed, g.len())?;
    let (mut alphas, root) = fltrust_alphas(&g, fixed);
    let (_, s2, _) = g.moments(&alphas);
    // positive rescale back to L(w); the cosine is untouched
    let c = (g.total / s2).sqrt();
    for a in alphas.iter_mut() {
        *a *= c;
    }
    let (poisoned, scalars) = assemble(w, p, &alphas)?;
    let ratio = norm_of(poisoned.values()) / g.total.sqrt();
    let mut checks = scalar_checks(&alphas);
    checks.push(cosine_check(&poisoned, w));
    checks.push(ConstraintCheck::new(
        "norm_ratio_in_band",
        ratio,
        kappa,
        ratio >= 1.0 / kappa - SIMILARITY_TOL && ratio <= kappa + SIMILARITY_TOL,
    ));
    checks.push(root);
    let f = trust_objective(&g, &alphas);
    Ok(PoisonResult::from_checks(poisoned, Some(scalars), f, checks, 1))
}

/// FLTrust construction rescaled to `L(w)` so the norm-ratio band holds.
pub fn faker_diversefl<R: Rng + ?Sized>(
    w: &ModelVector,
    p: &GroupPartition,
    kappa: f64,
    rng: &mut R,
) -> Result<PoisonResult> {
    let (lo, hi) = FLTRUST_FIXED_RANGE;
    let fixed = draw_fixed(p.num_groups(), lo, hi, rng);
    faker_diversefl_with(w, p, kappa, &fixed)
}

/// `(n+1)·w`: cosine to `w` stays exactly 1.
pub fn faker_shieldfl(w: &ModelVector, n: usize) -> Result<PoisonResult> {
    if norm_of(w.values()) == 0.0 {
        return Err(Error::ZeroVector);
    }
    let k = (n + 1) as f64;
    let scalars = ScalarVector::new(vec![k; w.dim()])?;
    let poisoned = w.scaled(k)?;
    let c = cosine_of(poisoned.values(), w.values())?;
    let mut checks = scalar_checks(&[k]);
    checks.push(ConstraintCheck::new("cosine_is_one", c, 1.0, (c - 1.0).abs() <= 1e-12));
    let f = c * k * w.dim() as f64;
    Ok(PoisonResult::from_checks(poisoned, Some(scalars), f, checks, 1))
}

/// What a Faker attacker reads when it builds a poison.
#[derive(Debug, Clone, Copy)]
pub struct FakerInputs<'a> {
    /// The attacker's honest model, or the attackers' shared intermediate model.
    pub w: &'a ModelVector,
    /// Previous-round global model.
    pub w_g: Option<&'a ModelVector>,
    pub partition: &'a GroupPartition,
    pub n: usize,
    pub m: usize,
    pub mode: AttackMode,
    pub margin: f64,
    /// Assumed norm-clipping upper bound; `L(w)` when absent.
    pub norm_upper: Option<f64>,
    pub params: DefenseParams,
}

/// The construction matched to `defense`. Rules judged by cosine only
/// (FoolsGold, ERR, FedAvg) reuse the FLTrust construction.
pub fn faker_for<R: Rng + ?Sized>(defense: DefenseKind, x: &FakerInputs<'_>, rng: &mut R) -> Result<PoisonResult> {
    match defense {
        DefenseKind::Krum => {
            let w_g = x.w_g.ok_or(Error::MissingContext("previous global model"))?;
            let s = KrumSetting {
                mode: x.mode,
                n: x.n,
                m: x.m,
                margin: x.margin,
            };
            faker_krum(x.w, w_g, x.partition, &s, rng)
        }
        DefenseKind::NormClipping => {
            let upper = x.norm_upper.unwrap_or_else(|| norm_of(x.w.values()));
            faker_normclip(x.w, x.partition, upper, rng)
        }
        DefenseKind::Flame => faker_flame(x.w, x.partition, x.n, &x.params, rng),
        DefenseKind::DiverseFl => faker_diversefl(x.w, x.partition, x.params.diversefl_kappa, rng),
        DefenseKind::ShieldFl => faker_shieldfl(x.w, x.n),
        DefenseKind::FlTrust | DefenseKind::FoolsGold | DefenseKind::FedAvg | DefenseKind::Err => {
            faker_fltrust(x.w, x.partition, rng)
        }
    }
}

/// `count` poisons from independent fixed-scalar draws of the construction
/// matched to `defense`.
pub fn faker_sybil<R: Rng + ?Sized>(
    seed_model: &FakerInputs<'_>,
    count: usize,
    defense: DefenseKind,
    rng: &mut R,
) -> Result<Vec<PoisonResult>> {
    if count == 0 {
        return Err(Error::Config {
            path: "m".into(),
            message: "a Sybil attack needs at least one client".into(),
        });
    }
    (0..count).map(|_| faker_for(defense, seed_model, rng)).collect()
}
