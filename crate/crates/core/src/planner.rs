//! Planner for the four-step state-mediated relocation.
//!
//! Loop 1 (dislocation): `O` sells `a + x` of A into pool 1 and buys the
//! flash amount back from pool 2. Loop 2 (extraction): the reverse trade
//! harvests the resulting price gap and pays the surplus to `B`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amm::{self, AmmError, Amount, AssetId, NumericMode, PoolState};
use crate::engine::{Action, Address, Bundle, BundleError, Role, WorldState};
use crate::numeric::Scalar;

/// Fractional digits used when a square root leaves the number field.
pub const APPROX_DIGITS: u32 = 48;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("no positive flash amount repays the first loop")]
    NoPositiveRoot,
    #[error("target {target} exceeds the maximum extractable amount {max}")]
    TargetExceedsMaxProfit { target: String, max: String },
    #[error("extraction yields no positive output")]
    NonPositiveExtraction,
    #[error("flash amount {x} leaves a repay shortfall of {shortfall} under exact repay")]
    ShortfallNotAllowed { x: String, shortfall: String },
    #[error("invalid plan input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Amm(#[from] AmmError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FundingPolicy {
    /// Flash amount chosen so the step-2 output repays it in full.
    ExactRepay,
    /// The principal's pull is raised by the repay gap `x − x'`.
    #[default]
    ShortfallFromPrincipal,
    /// The operator covers `x − x'` from its own inventory.
    ShortfallFromOperator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionStyle {
    /// Borrow `b'` from pool 2, sell it into pool 1, repay `y` in A.
    #[default]
    FlashSwap,
    /// Flash-borrow `y`, sell it into pool 2, sell `b'` into pool 1.
    Swap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ExtractionTarget {
    /// `a' = a`.
    ReturnPrincipal,
    MaxProfit,
    Exact(Amount),
    /// Extraction driven by an observed A repayment.
    ObservedY(Amount),
    /// Extraction driven by an observed B amount.
    ObservedBPrime(Amount),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum FlashChoice {
    Solve,
    Given(Amount),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanRequest {
    pub principal: Address,
    pub beneficiary: Address,
    pub operator: Address,
    pub flash_provider: Address,
    pub pool1: PoolState,
    pub pool2: PoolState,
    /// The migrated asset.
    pub asset: AssetId,
    pub a: Amount,
    pub flash: FlashChoice,
    pub target: ExtractionTarget,
    pub funding_policy: FundingPolicy,
    pub extraction_style: ExtractionStyle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanPools {
    pub pool1: PoolState,
    pub pool2: PoolState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelocationPlan {
    pub principal: Address,
    pub beneficiary: Address,
    pub operator: Address,
    pub flash_provider: Address,
    /// Pre-execution pool states.
    pub pools: PlanPools,
    pub asset: AssetId,
    pub counter_asset: AssetId,
    pub a: Amount,
    pub x: Amount,
    pub b: Amount,
    pub x_prime: Amount,
    /// Repay gap `x − x'` covered per the funding policy.
    pub shortfall: Amount,
    pub b_prime: Amount,
    pub y: Amount,
    /// Gross extraction output `out₁(b') − y` before the payout.
    pub extracted: Amount,
    pub predicted_a_prime: Amount,
    pub funding_policy: FundingPolicy,
    pub extraction_style: ExtractionStyle,
    pub numeric_mode: NumericMode,
}

impl RelocationPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    /// What `O` keeps: rounding dust plus any surplus above the payout.
    pub fn operator_residual(&self) -> Scalar {
        let surplus = (self.x_prime.value() - self.x.value()).max(Scalar::zero());
        let op_cover = match self.funding_policy {
            FundingPolicy::ShortfallFromOperator => self.shortfall.value().clone(),
            _ => Scalar::zero(),
        };
        surplus + self.extracted.value() - self.predicted_a_prime.value() - op_cover
    }

    /// Amount pulled from the principal.
    pub fn principal_pull(&self) -> Amount {
        match self.funding_policy {
            FundingPolicy::ShortfallFromPrincipal => &self.a + &self.shortfall,
            _ => self.a.clone(),
        }
    }

    /// `a'/a`.
    pub fn efficiency(&self) -> Scalar {
        self.predicted_a_prime.value() / self.a.value()
    }
}

/// Pool reserves oriented on the migrated asset.
#[derive(Debug, Clone)]
struct Oriented {
    ra: Scalar,
    rb: Scalar,
    gamma: Scalar,
    fee_bps: u32,
    mode: NumericMode,
}

fn orient(pool: &PoolState, asset: &AssetId) -> Result<(Oriented, AssetId), PlanError> {
    let other = pool.other_asset(asset)?.clone();
    Ok((
        Oriented {
            ra: pool.reserve_of(asset)?.value().clone(),
            rb: pool.reserve_of(&other)?.value().clone(),
            gamma: pool.gamma(),
            fee_bps: pool.fee_bps,
            mode: pool.mode,
        },
        other,
    ))
}

impl Oriented {
    fn a_to_b(&self, v: &Scalar) -> Scalar {
        amm::amount_out(&self.ra, &self.rb, v, self.fee_bps, self.mode)
    }

    fn b_to_a(&self, v: &Scalar) -> Scalar {
        amm::amount_out(&self.rb, &self.ra, v, self.fee_bps, self.mode)
    }

    /// B input needed to take `v` of A out.
    fn b_in_for_a(&self, v: &Scalar) -> Scalar {
        amm::amount_in_for(&self.rb, &self.ra, v, self.fee_bps, self.mode)
    }

    /// A input needed to take `v` of B out.
    fn a_in_for_b(&self, v: &Scalar) -> Scalar {
        amm::amount_in_for(&self.ra, &self.rb, v, self.fee_bps, self.mode)
    }
}

fn check_pair(pool1: &PoolState, pool2: &PoolState, asset: &AssetId) -> Result<AssetId, PlanError> {
    if pool1.pool_id == pool2.pool_id {
        return Err(PlanError::InvalidInput("the two pools must differ".into()));
    }
    if pool1.mode != pool2.mode {
        return Err(PlanError::InvalidInput("pools use different numeric modes".into()));
    }
    let other = pool1.other_asset(asset)?.clone();
    if !pool2.trades(asset) || !pool2.trades(&other) {
        return Err(PlanError::InvalidInput("pools must trade the same pair".into()));
    }
    Ok(other)
}

/// Square root that stays inside the field of `hint`: a root that would
/// open a second quadratic field is replaced by a rational approximation.
fn field_sqrt(v: &Scalar, hint: Option<&num_bigint::BigInt>) -> (Scalar, bool) {
    match v.sqrt_exact(hint) {
        Some(r) if hint.is_none() || r.radicand().is_none() || r.radicand() == hint => (r, true),
        _ => (v.sqrt_approx(APPROX_DIGITS), false),
    }
}

/// Smaller root of `qa·t² + qb·t + qc = 0`, exact when the discriminant's
/// square root lies in the working field. `None` when no real root exists.
fn smaller_root(qa: &Scalar, qb: &Scalar, qc: &Scalar, hint: Option<&num_bigint::BigInt>) -> Option<Scalar> {
    let two = Scalar::from_int(2);
    let disc = qb * qb - Scalar::from_int(4) * qa * qc;
    if disc.is_negative() {
        return None;
    }
    let (root, _) = field_sqrt(&disc, hint);
    Some((-qb - root) / (two * qa))
}

/// Residual of the first-loop consistency condition at flash amount `x`,
/// fee-adjusted: `γ²r_B¹(x+a)(r_A²−x) − r_B² x (r_A¹ + γ(x+a))`.
pub fn consistency_residual(pool1: &PoolState, pool2: &PoolState, asset: &AssetId, a: &Scalar, x: &Scalar) -> Result<Scalar, PlanError> {
    check_pair(pool1, pool2, asset)?;
    let (p1, _) = orient(pool1, asset)?;
    let (p2, _) = orient(pool2, asset)?;
    let g = &p1.gamma;
    let g2 = &p2.gamma;
    let lhs = g * g2 * &p1.rb * (x + a) * (&p2.ra - x);
    let rhs = &p2.rb * x * (&p1.ra + g * (x + a));
    Ok(lhs - rhs)
}

/// Flash amount `x` that the step-2 output repays exactly.
pub fn solve_flash_amount(pool1: &PoolState, pool2: &PoolState, asset: &AssetId, a: &Amount) -> Result<Amount, PlanError> {
    check_pair(pool1, pool2, asset)?;
    if a.is_zero() {
        return Err(PlanError::InvalidInput("principal input must be positive".into()));
    }
    let (p1, _) = orient(pool1, asset)?;
    let (p2, _) = orient(pool2, asset)?;
    let a = a.value();
    match pool1.mode {
        NumericMode::Exact => {
            // γ₁γ₂r_B¹(x+a)(r_A²−x) = r_B² x(r_A¹ + γ₁(x+a)), a quadratic in x
            // with a negative constant term: exactly one positive root.
            let gg = &p1.gamma * &p2.gamma;
            let qa = &gg * &p1.rb + &p2.rb * &p1.gamma;
            let qb = &p2.rb * (&p1.ra + &p1.gamma * a) - &gg * &p1.rb * (&p2.ra - a);
            let qc = -(&gg * &p1.rb * a * &p2.ra);
            let hint = [&p1.ra, &p1.rb, &p2.ra, &p2.rb, a].into_iter().find_map(|v| v.radicand()).cloned();
            let disc = &qb * &qb - Scalar::from_int(4) * &qa * &qc;
            let (root, _) = field_sqrt(&disc, hint.as_ref());
            let x = (root - qb) / (Scalar::from_int(2) * qa);
            if !x.is_positive() || x >= p2.ra {
                return Err(PlanError::NoPositiveRoot);
            }
            Ok(Amount::new(x)?)
        }
        NumericMode::Integer => {
            // Residual in B units: what step 1 yields minus what step 2 needs.
            let g = |x: &Scalar| p1.a_to_b(&(a + x)) - p2.b_in_for_a(x);
            let eps = Scalar::from_ratio(999_999, 1_000_000);
            let mut hi = Scalar::from_int((&p2.ra * &eps).floor());
            if g(&hi) >= Scalar::zero() {
                return Err(PlanError::NoPositiveRoot);
            }
            let mut lo = Scalar::zero();
            let one = Scalar::one();
            while &hi - &lo > one {
                let mid = Scalar::from_int(((&lo + &hi) / Scalar::from_int(2)).floor());
                if g(&mid) >= Scalar::zero() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if lo.is_zero() {
                return Err(PlanError::NoPositiveRoot);
            }
            Ok(Amount::new(lo)?)
        }
    }
}

/// Solved second-loop parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub y: Amount,
    pub b_prime: Amount,
    /// `out₁(b') − y`, at least the requested target.
    pub gross: Amount,
}

/// Coefficients of `a'(y) = N y / (M + K y) − y` for the swap composition
/// A→B on pool 2 followed by B→A on pool 1.
struct ProfitCurve {
    n: Scalar,
    m: Scalar,
    k: Scalar,
}

impl ProfitCurve {
    fn new(p1: &Oriented, p2: &Oriented) -> Self {
        let (g1, g2) = (&p1.gamma, &p2.gamma);
        ProfitCurve {
            n: g1 * g2 * &p1.ra * &p2.rb,
            m: &p1.rb * &p2.ra,
            k: g2 * &p1.rb + g1 * g2 * &p2.rb,
        }
    }

    fn hint(&self) -> Option<num_bigint::BigInt> {
        [&self.n, &self.m, &self.k].into_iter().find_map(|v| v.radicand()).cloned()
    }

    /// Optimal `y` (zero when no profit exists).
    fn argmax(&self) -> Scalar {
        if self.n <= self.m {
            return Scalar::zero();
        }
        let nm = &self.n * &self.m;
        let (root, exact) = field_sqrt(&nm, self.hint().as_ref());
        let y = (root - &self.m) / &self.k;
        if exact {
            y
        } else {
            y.max(Scalar::zero())
        }
    }
}

/// Exact-mode step values for an A-denominated `y`.
fn forward_exact(p1: &Oriented, p2: &Oriented, y: &Scalar) -> (Scalar, Scalar) {
    let b_prime = p2.a_to_b(y);
    let out = p1.b_to_a(&b_prime);
    (b_prime, out - y)
}

/// Integer-mode extraction as a function of the decision variable `v`:
/// `b'` for the flash-swap style, `y` for the swap style.
fn forward_integer(p1: &Oriented, p2: &Oriented, style: ExtractionStyle, v: &Scalar) -> Option<(Scalar, Scalar, Scalar)> {
    match style {
        ExtractionStyle::FlashSwap => {
            if v >= &p2.rb {
                return None;
            }
            let y = p2.a_in_for_b(v);
            let out = p1.b_to_a(v);
            Some((y.clone(), v.clone(), out - y))
        }
        ExtractionStyle::Swap => {
            let b_prime = p2.a_to_b(v);
            let out = p1.b_to_a(&b_prime);
            Some((v.clone(), b_prime, out - v))
        }
    }
}

fn integer_bound(p2: &Oriented, style: ExtractionStyle) -> Scalar {
    let r = match style {
        ExtractionStyle::FlashSwap => &p2.rb,
        ExtractionStyle::Swap => &p2.ra,
    };
    Scalar::from_int(r.floor() - 1)
}

fn integer_gross(p1: &Oriented, p2: &Oriented, style: ExtractionStyle, v: &Scalar) -> Scalar {
    forward_integer(p1, p2, style, v).map(|t| t.2).unwrap_or_else(|| Scalar::from_int(-1))
}

/// Integer-mode maximizer of the extraction output: ternary search on the
/// unimodal envelope, then a local scan to absorb rounding noise.
fn integer_argmax(p1: &Oriented, p2: &Oriented, style: ExtractionStyle) -> (Scalar, Scalar) {
    let f = |v: &Scalar| integer_gross(p1, p2, style, v);
    let mut lo = Scalar::zero();
    let mut hi = integer_bound(p2, style);
    let three = Scalar::from_int(3);
    while &hi - &lo > Scalar::from_int(8) {
        let third = Scalar::from_int(((&hi - &lo) / &three).floor());
        let m1 = &lo + &third;
        let m2 = &hi - &third;
        if f(&m1) < f(&m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let mut best = (lo.clone(), f(&lo));
    let start = (&lo - Scalar::from_int(64)).max(Scalar::zero());
    let end = (&hi + Scalar::from_int(64)).min(integer_bound(p2, style));
    let mut v = start;
    while v <= end {
        let g = f(&v);
        if g > best.1 {
            best = (v.clone(), g);
        }
        v = v + Scalar::one();
    }
    best
}

/// Largest extraction output achievable on the dislocated pools.
pub fn max_extractable(pool1_after: &PoolState, pool2_after: &PoolState, asset: &AssetId) -> Result<Amount, PlanError> {
    max_extractable_with(pool1_after, pool2_after, asset, ExtractionStyle::default())
}

pub fn max_extractable_with(
    pool1_after: &PoolState,
    pool2_after: &PoolState,
    asset: &AssetId,
    style: ExtractionStyle,
) -> Result<Amount, PlanError> {
    check_pair(pool1_after, pool2_after, asset)?;
    let (p1, _) = orient(pool1_after, asset)?;
    let (p2, _) = orient(pool2_after, asset)?;
    let best = match pool1_after.mode {
        NumericMode::Exact => {
            let y = ProfitCurve::new(&p1, &p2).argmax();
            if y.is_zero() {
                Scalar::zero()
            } else {
                forward_exact(&p1, &p2, &y).1
            }
        }
        NumericMode::Integer => integer_argmax(&p1, &p2, style).1,
    };
    Ok(Amount::new(best.max(Scalar::zero()))?)
}

/// Extraction parameters whose output reaches `target` on the ascending
/// branch (smaller `y`).
pub fn solve_extraction(
    pool1_after: &PoolState,
    pool2_after: &PoolState,
    asset: &AssetId,
    target: &Amount,
    style: ExtractionStyle,
) -> Result<Extraction, PlanError> {
    check_pair(pool1_after, pool2_after, asset)?;
    if target.is_zero() {
        return Ok(Extraction {
            y: Amount::zero(),
            b_prime: Amount::zero(),
            gross: Amount::zero(),
        });
    }
    let (p1, _) = orient(pool1_after, asset)?;
    let (p2, _) = orient(pool2_after, asset)?;
    let t = target.value();
    let exceeds = |max: Scalar| PlanError::TargetExceedsMaxProfit {
        target: t.to_string(),
        max: max.to_string(),
    };
    match pool1_after.mode {
        NumericMode::Exact => {
            // K y² + (M + K t − N) y + t M = 0
            let c = ProfitCurve::new(&p1, &p2);
            let qb = &c.m + &c.k * t - &c.n;
            let qc = t * &c.m;
            let Some(y) = smaller_root(&c.k, &qb, &qc, c.hint().as_ref()) else {
                let y = c.argmax();
                return Err(exceeds(forward_exact(&p1, &p2, &y).1));
            };
            if !y.is_positive() {
                return Err(PlanError::NonPositiveExtraction);
            }
            let (b_prime, gross) = forward_exact(&p1, &p2, &y);
            // A truncated discriminant root lands slightly up the ascending
            // branch, so `gross` never falls short of the target.
            if &gross < t {
                return Err(exceeds(gross));
            }
            Ok(Extraction {
                y: Amount::new(y)?,
                b_prime: Amount::new(b_prime)?,
                gross: Amount::new(gross)?,
            })
        }
        NumericMode::Integer => {
            let (vmax, best) = integer_argmax(&p1, &p2, style);
            if &best < t {
                return Err(exceeds(best));
            }
            let (mut lo, mut hi) = (Scalar::zero(), vmax);
            while &hi - &lo > Scalar::one() {
                let mid = Scalar::from_int(((&lo + &hi) / Scalar::from_int(2)).floor());
                if &integer_gross(&p1, &p2, style, &mid) >= t {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let (y, b_prime, gross) = forward_integer(&p1, &p2, style, &hi).expect("within bound");
            Ok(Extraction {
                y: Amount::new(y)?,
                b_prime: Amount::new(b_prime)?,
                gross: Amount::new(gross)?,
            })
        }
    }
}

/// Extraction at an observed parameter, no target solving.
fn extraction_at(p1: &Oriented, p2: &Oriented, target: &ExtractionTarget) -> Result<Extraction, PlanError> {
    let (y, b_prime) = match target {
        ExtractionTarget::ObservedY(y) => {
            let y = y.value().clone();
            (y.clone(), p2.a_to_b(&y))
        }
        ExtractionTarget::ObservedBPrime(b) => {
            let b = b.value().clone();
            if b >= p2.rb {
                return Err(AmmError::OutputNotLessThanReserve(b.to_string(), p2.rb.to_string()).into());
            }
            (p2.a_in_for_b(&b), b)
        }
        _ => unreachable!("observed targets only"),
    };
    let gross = p1.b_to_a(&b_prime) - &y;
    if !gross.is_positive() {
        return Err(PlanError::NonPositiveExtraction);
    }
    Ok(Extraction {
        y: Amount::new(y)?,
        b_prime: Amount::new(b_prime)?,
        gross: Amount::new(gross)?,
    })
}

/// Solves both loops and returns the full plan.
pub fn plan_relocation(req: &PlanRequest) -> Result<RelocationPlan, PlanError> {
    let counter = check_pair(&req.pool1, &req.pool2, &req.asset)?;
    if req.a.is_zero() {
        return Err(PlanError::InvalidInput("principal input must be positive".into()));
    }
    let mode = req.pool1.mode;
    let x = match (&req.flash, req.funding_policy) {
        (FlashChoice::Given(x), policy) if policy != FundingPolicy::ExactRepay => x.clone(),
        _ => solve_flash_amount(&req.pool1, &req.pool2, &req.asset, &req.a)?,
    };
    let step1 = amm::swap_exact_in(&req.pool1, &req.asset, &(&req.a + &x))?;
    let b = step1.amount_out;
    let step2 = amm::swap_exact_in(&req.pool2, &counter, &b)?;
    let x_prime = step2.amount_out;
    let shortfall = x.checked_sub(&x_prime).unwrap_or_default();
    if req.funding_policy == FundingPolicy::ExactRepay && !shortfall.is_zero() {
        return Err(PlanError::ShortfallNotAllowed {
            x: x.to_string(),
            shortfall: shortfall.to_string(),
        });
    }
    let (pool1_after, pool2_after) = (step1.pool, step2.pool);
    let (p1, _) = orient(&pool1_after, &req.asset)?;
    let (p2, _) = orient(&pool2_after, &req.asset)?;

    let (ex, payout) = match &req.target {
        ExtractionTarget::ObservedY(_) | ExtractionTarget::ObservedBPrime(_) => {
            let ex = extraction_at(&p1, &p2, &req.target)?;
            let pay = ex.gross.clone();
            (ex, pay)
        }
        ExtractionTarget::MaxProfit => {
            let max = max_extractable_with(&pool1_after, &pool2_after, &req.asset, req.extraction_style)?;
            let ex = solve_extraction(&pool1_after, &pool2_after, &req.asset, &max, req.extraction_style)?;
            let pay = ex.gross.clone();
            (ex, pay)
        }
        ExtractionTarget::ReturnPrincipal | ExtractionTarget::Exact(_) => {
            let t = match &req.target {
                ExtractionTarget::Exact(t) => t.clone(),
                _ => req.a.clone(),
            };
            let ex = solve_extraction(&pool1_after, &pool2_after, &req.asset, &t, req.extraction_style)?;
            (ex, t)
        }
    };
    let _ = mode;

    Ok(RelocationPlan {
        principal: req.principal.clone(),
        beneficiary: req.beneficiary.clone(),
        operator: req.operator.clone(),
        flash_provider: req.flash_provider.clone(),
        pools: PlanPools {
            pool1: req.pool1.clone(),
            pool2: req.pool2.clone(),
        },
        asset: req.asset.clone(),
        counter_asset: counter,
        a: req.a.clone(),
        x,
        b,
        x_prime,
        shortfall,
        b_prime: ex.b_prime,
        y: ex.y,
        extracted: ex.gross,
        predicted_a_prime: payout,
        funding_policy: req.funding_policy,
        extraction_style: req.extraction_style,
        numeric_mode: mode,
    })
}

/// Emits the executable bundle for `plan`, initiated by the operator.
pub fn build_relocation_bundle(plan: &RelocationPlan, bundle_id: &str) -> Bundle {
    let (o, a_sym, b_sym) = (&plan.operator, &plan.asset, &plan.counter_asset);
    let pool1 = plan.pools.pool1.pool_id.clone();
    let pool2 = plan.pools.pool2.pool_id.clone();
    let mut actions = vec![Action::FlashBorrow {
        provider: plan.flash_provider.clone(),
        borrower: o.clone(),
        asset: a_sym.clone(),
        amount: plan.x.clone(),
    }];
    if plan.principal != *o {
        actions.push(Action::TransferFrom {
            owner: plan.principal.clone(),
            spender: o.clone(),
            to: o.clone(),
            asset: a_sym.clone(),
            amount: plan.principal_pull(),
        });
    }
    actions.push(Action::Swap {
        caller: o.clone(),
        pool: pool1.clone(),
        input_asset: a_sym.clone(),
        amount_in: &plan.a + &plan.x,
        recipient: o.clone(),
    });
    actions.push(Action::Swap {
        caller: o.clone(),
        pool: pool2.clone(),
        input_asset: b_sym.clone(),
        amount_in: plan.b.clone(),
        recipient: o.clone(),
    });
    actions.push(Action::FlashRepay {
        borrower: o.clone(),
        provider: plan.flash_provider.clone(),
        asset: a_sym.clone(),
        amount: plan.x.clone(),
    });
    if !plan.y.is_zero() {
        match plan.extraction_style {
            ExtractionStyle::FlashSwap => {
                actions.push(Action::FlashSwapBorrow {
                    pool: pool2.clone(),
                    borrower: o.clone(),
                    asset: b_sym.clone(),
                    amount: plan.b_prime.clone(),
                });
                actions.push(Action::Swap {
                    caller: o.clone(),
                    pool: pool1.clone(),
                    input_asset: b_sym.clone(),
                    amount_in: plan.b_prime.clone(),
                    recipient: o.clone(),
                });
                actions.push(Action::FlashSwapRepay {
                    pool: pool2.clone(),
                    borrower: o.clone(),
                    asset: a_sym.clone(),
                    amount: plan.y.clone(),
                });
            }
            ExtractionStyle::Swap => {
                actions.push(Action::FlashBorrow {
                    provider: plan.flash_provider.clone(),
                    borrower: o.clone(),
                    asset: a_sym.clone(),
                    amount: plan.y.clone(),
                });
                actions.push(Action::Swap {
                    caller: o.clone(),
                    pool: pool2.clone(),
                    input_asset: a_sym.clone(),
                    amount_in: plan.y.clone(),
                    recipient: o.clone(),
                });
                actions.push(Action::Swap {
                    caller: o.clone(),
                    pool: pool1.clone(),
                    input_asset: b_sym.clone(),
                    amount_in: plan.b_prime.clone(),
                    recipient: o.clone(),
                });
                actions.push(Action::FlashRepay {
                    borrower: o.clone(),
                    provider: plan.flash_provider.clone(),
                    asset: a_sym.clone(),
                    amount: plan.y.clone(),
                });
            }
        }
    }
    if !plan.predicted_a_prime.is_zero() {
        actions.push(Action::Transfer {
            from: o.clone(),
            to: plan.beneficiary.clone(),
            asset: a_sym.clone(),
            amount: plan.predicted_a_prime.clone(),
        });
    }
    Bundle {
        id: bundle_id.to_string(),
        initiator: o.clone(),
        actions,
    }
}

/// Minimal world for replaying `plan`: the principal holds and approves what
/// the plan pulls, the operator holds any shortfall it must cover.
pub fn relocation_world(plan: &RelocationPlan) -> WorldState {
    let (p, b, o, f) = (&plan.principal, &plan.beneficiary, &plan.operator, &plan.flash_provider);
    let mut w = WorldState::new(plan.numeric_mode);
    w.add_pool(plan.pools.pool1.clone());
    w.add_pool(plan.pools.pool2.clone());
    w.label(o, Role::Operator);
    w.label(b, Role::Beneficiary);
    w.label(p, Role::Principal);
    w.label(f, Role::FlashProvider);
    let a = &plan.asset;
    let pull = plan.principal_pull();
    w.set_balance(p, a, pull.clone());
    w.approve(p, o, a, pull);
    if plan.funding_policy == FundingPolicy::ShortfallFromOperator {
        w.set_balance(o, a, plan.shortfall.clone());
    }
    let liquidity = (plan.x.value() + plan.y.value()) * Scalar::from_int(2);
    w.set_balance(f, a, Amount::new(liquidity).expect("positive"));
    w
}
