//! Recovery of pre-execution pool reserves from observed relocation
//! quantities, and integer-mode replay validation.
//!
//! Pool 1 is pinned by the step-1 and step-4 trades, pool 2 by the step-2
//! and step-3 trades. The solver runs damped Newton on all four relative
//! residuals in log-reserve coordinates and falls back to per-pool
//! bisection.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amm::{AmmError, Amount, AssetId, NumericMode, PoolState, BPS_DENOM};
use crate::engine::{delta_of, execute_bundle, net_deltas, Address};
use crate::numeric::Scalar;
use crate::planner::{self, ExtractionStyle, ExtractionTarget, FlashChoice, FundingPolicy, PlanError, PlanRequest};

pub const DEFAULT_TOLERANCE: f64 = 1e-12;
const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("no convergence after {iterations} iterations (max residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("observations are inconsistent: {reason}")]
    InconsistentObservations { reason: String, best: Option<Box<CalibratedPools>> },
    #[error("invalid observation {field}: {reason}")]
    InvalidObservation { field: String, reason: String },
    #[error(transparent)]
    Amm(#[from] AmmError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("replay failed: {0}")]
    Replay(String),
}

/// Observed relocation quantities in token units (decimal strings in JSON).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationSet {
    /// Migrated asset (A) and counter asset (B).
    pub asset: AssetId,
    pub counter_asset: AssetId,
    pub fee_bps: u32,
    pub a: Scalar,
    pub x: Scalar,
    pub b: Scalar,
    pub x_prime: Scalar,
    pub b_prime: Scalar,
    pub y: Scalar,
    pub a_prime: Scalar,
}

impl ObservationSet {
    /// The 10 WETH relocation observed on a mainnet fork against two
    /// WETH/USDT pools charging 30 bps.
    pub fn fork_reference() -> Self {
        let p = |s: &str| Scalar::parse(s).expect("literal");
        ObservationSet {
            asset: AssetId::new("WETH", 18).expect("asset"),
            counter_asset: AssetId::new("USDT", 6).expect("asset"),
            fee_bps: 30,
            a: p("10.0000"),
            x: p("50.4893"),
            b: p("159461.05"),
            x_prime: p("50.4741"),
            b_prime: p("157262.60"),
            y: p("49.9515"),
            a_prime: p("9.3541"),
        }
    }

    pub fn from_json(s: &str) -> Result<Self, CalibrationError> {
        let obs: ObservationSet = serde_json::from_str(s).map_err(|e| CalibrationError::InvalidObservation {
            field: "document".into(),
            reason: e.to_string(),
        })?;
        obs.validate()?;
        Ok(obs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("observations serialize")
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        for (name, v) in self.fields() {
            if !v.is_positive() {
                return Err(CalibrationError::InvalidObservation {
                    field: name.into(),
                    reason: "must be positive".into(),
                });
            }
        }
        if self.fee_bps >= BPS_DENOM {
            return Err(CalibrationError::InvalidObservation {
                field: "fee_bps".into(),
                reason: "must be below 10000".into(),
            });
        }
        if self.fee_bps > 0 && self.a_prime >= self.a {
            return Err(CalibrationError::InconsistentObservations {
                reason: format!("a' = {} is not below a = {} although swaps charge fees", self.a_prime, self.a),
                best: None,
            });
        }
        Ok(())
    }

    fn fields(&self) -> [(&'static str, &Scalar); 7] {
        [
            ("a", &self.a),
            ("x", &self.x),
            ("b", &self.b),
            ("x_prime", &self.x_prime),
            ("b_prime", &self.b_prime),
            ("y", &self.y),
            ("a_prime", &self.a_prime),
        ]
    }

    fn gamma(&self) -> f64 {
        f64::from(BPS_DENOM - self.fee_bps) / f64::from(BPS_DENOM)
    }

    /// Observations produced by exact replay of the four steps on known
    /// pools, with step-2 output `x'` and extraction input `y`.
    pub fn synthesize(pool1: &PoolState, pool2: &PoolState, asset: &AssetId, a: &Scalar, x: &Scalar, y: &Scalar) -> Result<Self, CalibrationError> {
        let counter = pool1.other_asset(asset)?.clone();
        if pool1.fee_bps != pool2.fee_bps {
            return Err(CalibrationError::InvalidObservation {
                field: "fee_bps".into(),
                reason: "pools charge different fees".into(),
            });
        }
        let s1 = crate::amm::swap_exact_in(pool1, asset, &Amount::new(a + x)?)?;
        let s2 = crate::amm::swap_exact_in(pool2, &counter, &s1.amount_out)?;
        let s3 = crate::amm::swap_exact_in(&s2.pool, asset, &Amount::new(y.clone())?)?;
        let s4 = crate::amm::swap_exact_in(&s1.pool, &counter, &s3.amount_out)?;
        let in_tokens = |v: &Amount, id: &AssetId| v.to_tokens(id, pool1.mode);
        Ok(ObservationSet {
            asset: asset.clone(),
            counter_asset: counter.clone(),
            fee_bps: pool1.fee_bps,
            a: in_tokens(&Amount::new(a.clone())?, asset),
            x: in_tokens(&Amount::new(x.clone())?, asset),
            b: in_tokens(&s1.amount_out, &counter),
            x_prime: in_tokens(&s2.amount_out, asset),
            b_prime: in_tokens(&s3.amount_out, &counter),
            y: in_tokens(&Amount::new(y.clone())?, asset),
            a_prime: in_tokens(&s4.amount_out, asset) - in_tokens(&Amount::new(y.clone())?, asset),
        })
    }
}

/// How the observed `b'` enters the replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BPrimeReading {
    /// `b'` is borrowed from pool 2 and repaid with the minimal `y`.
    FlashBorrow,
    /// `b'` is the output of selling the observed `y` into pool 2.
    SwapOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationResidual {
    pub equation: String,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedPools {
    /// Pre-execution pools in token units (exact mode).
    pub pool1: PoolState,
    pub pool2: PoolState,
    pub residuals: Vec<EquationResidual>,
    pub iterations: usize,
    pub method: String,
    /// Reading of `b'` with the lower integer-replay residual.
    pub b_prime_reading: Option<BPrimeReading>,
}

impl CalibratedPools {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().map(|r| r.relative_error).fold(0.0, f64::max)
    }

    /// Same pools in smallest units, integer mode.
    pub fn integer_pools(&self) -> Result<(PoolState, PoolState), CalibrationError> {
        Ok((to_integer_pool(&self.pool1)?, to_integer_pool(&self.pool2)?))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serializes")
    }
}

fn to_integer_pool(p: &PoolState) -> Result<PoolState, CalibrationError> {
    let conv = |v: &Amount, id: &AssetId| -> Result<Amount, AmmError> {
        Amount::from_token_value(v.value().clone(), id, NumericMode::Integer)
    };
    Ok(PoolState::new(
        p.pool_id.clone(),
        p.asset0.clone(),
        p.asset1.clone(),
        conv(&p.reserve0, &p.asset0)?,
        conv(&p.reserve1, &p.asset1)?,
        p.fee_bps,
        NumericMode::Integer,
    )?)
}

/// Float view of the observations used by the solver.
#[derive(Debug, Clone, Copy)]
struct Obs {
    g: f64,
    u: f64,
    b: f64,
    xp: f64,
    bp: f64,
    y: f64,
    w: f64,
}

impl Obs {
    fn new(o: &ObservationSet) -> Self {
        Obs {
            g: o.gamma(),
            u: (&o.a + &o.x).to_f64(),
            b: o.b.to_f64(),
            xp: o.x_prime.to_f64(),
            bp: o.b_prime.to_f64(),
            y: o.y.to_f64(),
            w: (&o.y + &o.a_prime).to_f64(),
        }
    }
}

fn out(g: f64, r_in: f64, r_out: f64, v: f64) -> f64 {
    g * v * r_out / (r_in + g * v)
}

/// Relative residuals of the four step equations at reserves
/// `(r_A¹, r_B¹, r_A², r_B²)`.
fn residuals(o: &Obs, r: &[f64; 4]) -> [f64; 4] {
    let [ra1, rb1, ra2, rb2] = *r;
    let b = out(o.g, ra1, rb1, o.u);
    let xp = out(o.g, rb2, ra2, o.b);
    // Post-trade states use the observed amounts, not the fitted ones.
    let bp = out(o.g, ra2 - o.xp, rb2 + o.b, o.y);
    let w = out(o.g, rb1 - o.b, ra1 + o.u, o.bp) ;
    [b / o.b - 1.0, xp / o.xp - 1.0, bp / o.bp - 1.0, w / o.w - 1.0]
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn feasible(o: &Obs, r: &[f64; 4]) -> bool {
    r.iter().all(|v| v.is_finite() && *v > 0.0) && r[1] > o.b && r[2] > o.xp
}

/// Seed from the observed effective prices: the spot price sits between the
/// forward and reverse execution prices, and the gap between effective and
/// spot price fixes the reserve depth.
fn seed(o: &Obs) -> [f64; 4] {
    let depth = |rho: f64, trade: f64| {
        let rho = if rho > 0.0 && rho < 1.0 { rho } else { 0.99 };
        rho * o.g * trade / (1.0 - rho)
    };
    // Pool 1 in B per A.
    let p1 = o.b / o.u;
    let p4 = o.bp / o.w;
    let spot1 = (p1 * p4).sqrt();
    let ra1 = depth(p1 / (o.g * spot1), o.u);
    // Pool 2 in B per A.
    let p2 = o.b / o.xp;
    let p3 = o.bp / o.y;
    let spot2 = (p2 * p3).sqrt();
    let rb2 = depth(o.xp * spot2 / (o.g * o.b), o.b);
    [ra1, spot1 * ra1, rb2 / spot2, rb2]
}

fn newton(o: &Obs, start: [f64; 4], tol: f64) -> Result<([f64; 4], usize), f64> {
    let mut z = Vector4::from_iterator(start.iter().map(|v| v.ln()));
    let eval = |z: &Vector4<f64>| {
        let r = [z[0].exp(), z[1].exp(), z[2].exp(), z[3].exp()];
        if feasible(o, &r) {
            Some(Vector4::from(residuals(o, &r)))
        } else {
            None
        }
    };
    let Some(mut f) = eval(&z) else {
        return Err(f64::INFINITY);
    };
    for it in 0..MAX_ITERATIONS {
        let norm = f.amax();
        if norm < tol {
            return Ok(([z[0].exp(), z[1].exp(), z[2].exp(), z[3].exp()], it));
        }
        let mut jac = Matrix4::zeros();
        for j in 0..4 {
            let h = 1e-7 * z[j].abs().max(1.0);
            let mut zh = z;
            zh[j] += h;
            let fh = eval(&zh).unwrap_or(f);
            let mut zl = z;
            zl[j] -= h;
            let fl = eval(&zl).unwrap_or(f);
            jac.set_column(j, &((fh - fl) / (2.0 * h)));
        }
        let Some(step) = jac.lu().solve(&(-f)) else {
            return Err(norm);
        };
        let mut lambda = 1.0;
        loop {
            let cand = z + step * lambda;
            if let Some(fc) = eval(&cand) {
                if fc.amax() < norm {
                    z = cand;
                    f = fc;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-12 {
                return Err(norm);
            }
        }
    }
    Err(f.amax())
}

/// Bisection for one pool: the first equation eliminates the second
/// reserve in closed form, leaving a scalar equation in `ln r`.
fn bisect_pool(f: impl Fn(f64) -> Option<f64>, lo_r: f64, hi_r: f64, tol: f64) -> Option<f64> {
    let grid: Vec<f64> = (0..=400)
        .map(|i| (lo_r.ln() + (hi_r.ln() - lo_r.ln()) * f64::from(i) / 400.0).exp())
        .collect();
    let vals: Vec<Option<f64>> = grid.iter().map(|r| f(*r)).collect();
    for i in 0..grid.len() - 1 {
        let (Some(fa), Some(fb)) = (vals[i], vals[i + 1]) else { continue };
        if fa == 0.0 {
            return Some(grid[i]);
        }
        if fa.signum() != fb.signum() {
            let (mut lo, mut hi, mut flo) = (grid[i].ln(), grid[i + 1].ln(), fa);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid.exp())?;
                if fm.abs() < tol * 1e-3 {
                    return Some(mid.exp());
                }
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            return Some((0.5 * (lo + hi)).exp());
        }
    }
    None
}

fn bisection(o: &Obs, tol: f64) -> Option<[f64; 4]> {
    // Pool 1: E1 gives r_B¹ from r_A¹, E4 remains.
    let rb1 = |ra1: f64| o.b * (ra1 + o.g * o.u) / (o.g * o.u);
    let f1 = |ra1: f64| {
        let r = [ra1, rb1(ra1), 1.0, 1.0];
        (r[1] > o.b).then(|| residuals(o, &[ra1, r[1], o.xp * 2.0, 1.0])[3])
    };
    let ra1 = bisect_pool(f1, o.u * 1e-3, o.u * 1e9, tol)?;
    // Pool 2: E2 gives r_A² from r_B², E3 remains.
    let ra2 = |rb2: f64| o.xp * (rb2 + o.g * o.b) / (o.g * o.b);
    let f2 = |rb2: f64| Some(residuals(o, &[1.0, o.b * 2.0, ra2(rb2), rb2])[2]);
    let rb2 = bisect_pool(f2, o.b * 1e-3, o.b * 1e9, tol)?;
    Some([ra1, rb1(ra1), ra2(rb2), rb2])
}

fn pools_from(obs: &ObservationSet, r: &[f64; 4]) -> Result<(PoolState, PoolState), CalibrationError> {
    let amt = |v: f64, id: &AssetId| -> Result<Amount, CalibrationError> {
        let s = Scalar::from_f64(v).ok_or_else(|| CalibrationError::Replay(format!("non-finite reserve {v}")))?;
        // Round to the asset's smallest unit.
        let q = Scalar::from_int(s.scale_pow10(i32::from(id.decimals)).round()).scale_pow10(-i32::from(id.decimals));
        Ok(Amount::new(q)?)
    };
    let (a, b) = (&obs.asset, &obs.counter_asset);
    let mk = |id: &str, ra: f64, rb: f64| -> Result<PoolState, CalibrationError> {
        Ok(PoolState::new(id, a.clone(), b.clone(), amt(ra, a)?, amt(rb, b)?, obs.fee_bps, NumericMode::Exact)?)
    };
    Ok((mk("pool1", r[0], r[1])?, mk("pool2", r[2], r[3])?))
}

/// Recovers pre-execution reserves; the `b'` reading is chosen by the lower
/// integer replay residual.
pub fn calibrate_reserves(obs: &ObservationSet) -> Result<CalibratedPools, CalibrationError> {
    calibrate_with_tolerance(obs, DEFAULT_TOLERANCE)
}

pub fn calibrate_with_tolerance(obs: &ObservationSet, tol: f64) -> Result<CalibratedPools, CalibrationError> {
    obs.validate()?;
    let o = Obs::new(obs);
    let (r, iterations, method) = match newton(&o, seed(&o), tol) {
        Ok((r, it)) => (r, it, "newton"),
        Err(newton_res) => match bisection(&o, tol) {
            Some(r) => (r, 0, "bisection"),
            None => {
                return Err(CalibrationError::NoConvergence {
                    iterations: MAX_ITERATIONS,
                    residual: newton_res,
                })
            }
        },
    };
    let res = residuals(&o, &r);
    let names = ["step1: out1(a+x) = b", "step2: out2(b) = x'", "step3: out2'(y) = b'", "step4: out1'(b') = y + a'"];
    let residuals: Vec<EquationResidual> = names
        .iter()
        .zip(res.iter())
        .map(|(n, v)| EquationResidual {
            equation: n.to_string(),
            relative_error: v.abs(),
        })
        .collect();
    let (pool1, pool2) = pools_from(obs, &r)?;
    let mut cal = CalibratedPools {
        pool1,
        pool2,
        residuals,
        iterations,
        method: method.into(),
        b_prime_reading: None,
    };
    if max_abs(&res) >= tol {
        return Err(CalibrationError::InconsistentObservations {
            reason: format!("residual floor {:e} above tolerance {tol:e}", max_abs(&res)),
            best: Some(Box::new(cal)),
        });
    }
    let mut best: Option<(BPrimeReading, f64)> = None;
    for reading in [BPrimeReading::FlashBorrow, BPrimeReading::SwapOutput] {
        if let Ok(rep) = replay_and_validate_as(&cal, obs, reading, FundingPolicy::ShortfallFromOperator) {
            if best.is_none_or(|(_, e)| rep.max_relative_error < e) {
                best = Some((reading, rep.max_relative_error));
            }
        }
    }
    cal.b_prime_reading = best.map(|(r, _)| r);
    Ok(cal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityCheck {
    pub quantity: String,
    pub observed: String,
    pub replayed: String,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub b_prime_reading: BPrimeReading,
    pub funding_policy: FundingPolicy,
    pub checks: Vec<QuantityCheck>,
    pub max_relative_error: f64,
    /// Beneficiary gain over principal loss, from the replayed net deltas.
    pub efficiency: f64,
    pub principal_delta: String,
    pub beneficiary_delta: String,
}

/// Replays the full bundle in integer mode with the calibrated reserves and
/// the observed inputs.
pub fn replay_and_validate(pools: &CalibratedPools, obs: &ObservationSet) -> Result<ReplayReport, CalibrationError> {
    let reading = pools.b_prime_reading.unwrap_or(BPrimeReading::FlashBorrow);
    replay_and_validate_as(pools, obs, reading, FundingPolicy::ShortfallFromOperator)
}

pub fn replay_and_validate_as(
    pools: &CalibratedPools,
    obs: &ObservationSet,
    reading: BPrimeReading,
    policy: FundingPolicy,
) -> Result<ReplayReport, CalibrationError> {
    let (p1, p2) = pools.integer_pools()?;
    let (a_id, b_id) = (&obs.asset, &obs.counter_asset);
    let units = |v: &Scalar, id: &AssetId| Amount::from_token_value(v.clone(), id, NumericMode::Integer);
    let a = units(&obs.a, a_id)?;
    let x = units(&obs.x, a_id)?;
    let (target, style) = match reading {
        BPrimeReading::FlashBorrow => (ExtractionTarget::ObservedBPrime(units(&obs.b_prime, b_id)?), ExtractionStyle::FlashSwap),
        BPrimeReading::SwapOutput => (ExtractionTarget::ObservedY(units(&obs.y, a_id)?), ExtractionStyle::Swap),
    };
    let (pr, ben) = (Address::new("P"), Address::new("B"));
    let req = PlanRequest {
        principal: pr.clone(),
        beneficiary: ben.clone(),
        operator: Address::new("O"),
        flash_provider: Address::new("F"),
        pool1: p1.clone(),
        pool2: p2.clone(),
        asset: a_id.clone(),
        a: a.clone(),
        flash: FlashChoice::Given(x.clone()),
        target,
        funding_policy: policy,
        extraction_style: style,
    };
    let plan = planner::plan_relocation(&req)?;
    let world = planner::relocation_world(&plan);
    let bundle = planner::build_relocation_bundle(&plan, "replay");
    let (_, trace) = execute_bundle(&world, &bundle).map_err(|e| CalibrationError::Replay(e.to_string()))?;
    let d = net_deltas(&trace);
    let dp = delta_of(&d, &pr, &a_id.symbol);
    let db = delta_of(&d, &ben, &a_id.symbol);
    let tok = |v: &Scalar, id: &AssetId| v.scale_pow10(-i32::from(id.decimals));
    let replayed = [
        ("b", tok(plan.b.value(), b_id), &obs.b),
        ("x_prime", tok(plan.x_prime.value(), a_id), &obs.x_prime),
        ("b_prime", tok(plan.b_prime.value(), b_id), &obs.b_prime),
        ("y", tok(plan.y.value(), a_id), &obs.y),
        ("a_prime", tok(&db, a_id), &obs.a_prime),
    ];
    let checks: Vec<QuantityCheck> = replayed
        .iter()
        .map(|(name, got, want)| QuantityCheck {
            quantity: name.to_string(),
            observed: want.to_decimal_string(8),
            replayed: got.to_decimal_string(8),
            relative_error: ((got - *want) / (*want).clone()).abs().to_f64(),
        })
        .collect();
    let max_relative_error = checks.iter().map(|c| c.relative_error).fold(0.0, f64::max);
    Ok(ReplayReport {
        b_prime_reading: reading,
        funding_policy: policy,
        checks,
        max_relative_error,
        efficiency: (&db / &(-dp.clone())).to_f64(),
        principal_delta: tok(&dp, a_id).to_decimal_string(8),
        beneficiary_delta: tok(&db, a_id).to_decimal_string(8),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sc(s: &str) -> Scalar {
        Scalar::parse(s).unwrap()
    }

    /// Independent oracle: both pools reduce to one linear equation each.
    fn closed_form(o: &ObservationSet) -> [f64; 4] {
        let g = o.gamma();
        let (a, x, b, xp, bp, y, ap) = (
            o.a.to_f64(),
            o.x.to_f64(),
            o.b.to_f64(),
            o.x_prime.to_f64(),
            o.b_prime.to_f64(),
            o.y.to_f64(),
            o.a_prime.to_f64(),
        );
        let (u, w) = (a + x, y + ap);
        let ra1 = g * bp * (w - u) / (g * bp - w * b / (g * u));
        let rb1 = b * (ra1 + g * u) / (g * u);
        let rb2 = g * y * (bp - b) / (g * y - bp * xp / (g * b));
        let ra2 = xp * (rb2 + g * b) / (g * b);
        [ra1, rb1, ra2, rb2]
    }

    #[test]
    fn reference_observations_match_closed_form() {
        let obs = ObservationSet::fork_reference();
        let cal = calibrate_reserves(&obs).unwrap();
        assert!(cal.max_residual() < DEFAULT_TOLERANCE, "{:?}", cal.residuals);
        let want = closed_form(&obs);
        let got = [&cal.pool1.reserve0, &cal.pool1.reserve1, &cal.pool2.reserve0, &cal.pool2.reserve1];
        for (g, w) in got.iter().zip(want) {
            assert!((g.to_f64() / w - 1.0).abs() < 1e-8, "{} vs {w}", g.to_f64());
        }
    }

    #[test]
    fn reference_replay_within_tolerance() {
        let obs = ObservationSet::fork_reference();
        let cal = calibrate_reserves(&obs).unwrap();
        let rep = replay_and_validate(&cal, &obs).unwrap();
        assert!(rep.max_relative_error <= 1e-3, "{:#?}", rep.checks);
        assert!((0.934..=0.937).contains(&rep.efficiency), "{}", rep.efficiency);
    }

    #[test]
    fn perturbed_reserves_break_replay() {
        let obs = ObservationSet::fork_reference();
        let mut cal = calibrate_reserves(&obs).unwrap();
        let bumped = cal.pool1.reserve1.value() * &sc("1.01");
        cal.pool1.reserve1 = Amount::new(Scalar::from_int(bumped.scale_pow10(6).round()).scale_pow10(-6)).unwrap();
        let rep = replay_and_validate(&cal, &obs).unwrap();
        assert!(rep.max_relative_error > 1e-3);
    }

    #[test]
    fn profit_above_principal_is_inconsistent() {
        let mut obs = ObservationSet::fork_reference();
        obs.a_prime = sc("10.5");
        assert!(matches!(
            calibrate_reserves(&obs),
            Err(CalibrationError::InconsistentObservations { .. })
        ));
    }

    #[test]
    fn observation_json_round_trip_uses_decimal_strings() {
        let obs = ObservationSet::fork_reference();
        let json = obs.to_json();
        assert!(json.contains("\"159461.05\""));
        assert_eq!(ObservationSet::from_json(&json).unwrap(), obs);
    }

    #[test]
    fn bisection_fallback_agrees_with_newton() {
        let obs = ObservationSet::fork_reference();
        let o = Obs::new(&obs);
        let r = bisection(&o, DEFAULT_TOLERANCE).unwrap();
        let want = closed_form(&obs);
        for (g, w) in r.iter().zip(want) {
            assert!((g / w - 1.0).abs() < 1e-8);
        }
    }
}
