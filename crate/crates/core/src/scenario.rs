//! Configuration-driven scenarios: limit-order role separation, the
//! two-loop relocation, and benign counterparts.
//!
//! Every scenario, including programmatically parameterized ones, is built
//! from a [`ScenarioConfig`], so a config file fully determines the world,
//! the bundle and therefore the trace bytes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amm::{self, AmmError, Amount, AssetId, NumericMode, PoolState};
use crate::calibration::{self, BPrimeReading, CalibratedPools, CalibrationError, ObservationSet};
use crate::engine::{execute_bundle, Action, Address, Bundle, BundleError, ExecutionTrace, LimitOrderIntent, Role, WorldState};
use crate::numeric::Scalar;
use crate::planner::{self, ExtractionStyle, ExtractionTarget, FlashChoice, FundingPolicy, PlanError, PlanRequest, RelocationPlan};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown builtin scenario {0}")]
    UnknownBuiltin(String),
    #[error(transparent)]
    Amm(#[from] AmmError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("scenario bundle does not execute: {0}")]
    Execution(#[from] BundleError),
}

fn schema(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Schema(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    PebLimitOrder,
    PebFlashSwapVariant,
    RelocationZeroFee,
    RelocationFeeCalibrated,
    BenignArbitrage,
    BenignRouting,
}

impl Recipe {
    pub fn is_relocation(self) -> bool {
        matches!(self, Recipe::RelocationZeroFee | Recipe::RelocationFeeCalibrated)
    }

    pub fn is_peb(self) -> bool {
        matches!(self, Recipe::PebLimitOrder | Recipe::PebFlashSwapVariant)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioMeta {
    pub name: String,
    pub recipe: Recipe,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetSpec {
    pub symbol: String,
    pub decimals: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddressSpec {
    pub id: String,
    #[serde(default)]
    pub role: Role,
    /// Literals such as `"10 WETH"`.
    #[serde(default)]
    pub balances: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub id: String,
    pub reserves: Vec<String>,
    #[serde(default)]
    pub fee_bps: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllowanceSpec {
    pub owner: String,
    pub spender: String,
    pub amount: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderSpec {
    pub id: String,
    pub making: String,
    pub taking: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default)]
    pub numeric_mode: NumericMode,
    /// Overrides every pool's fee when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fee_bps: Option<u32>,
    #[serde(default)]
    pub flash_fee_bps: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flash_amount: Option<String>,
    /// `return_principal`, `max_profit`, `observed`, or an amount literal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub funding_policy: Option<FundingPolicy>,
    #[serde(default)]
    pub extraction_style: ExtractionStyle,
    #[serde(default = "default_true")]
    pub route_via_settlement: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beneficiary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub executor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flash_provider: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settlement: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool2: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<OrderSpec>,
    /// Name of a built-in observation set, or inline JSON.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<String>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub scenario: ScenarioMeta,
    pub assets: Vec<AssetSpec>,
    #[serde(default)]
    pub addresses: Vec<AddressSpec>,
    #[serde(default)]
    pub pools: Vec<PoolSpec>,
    #[serde(default)]
    pub allowances: Vec<AllowanceSpec>,
    #[serde(default)]
    pub params: Params,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(schema(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// The migration a scenario is constructed to perform.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub principal: Address,
    pub beneficiary: Address,
    pub asset: String,
    pub amount: Amount,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub recipe: Recipe,
    pub config: ScenarioConfig,
    pub world: WorldState,
    pub bundle: Bundle,
    pub intents: Vec<LimitOrderIntent>,
    pub plan: Option<RelocationPlan>,
    pub calibration: Option<CalibratedPools>,
    pub ground_truth: Option<GroundTruth>,
}

impl Scenario {
    pub fn run(&self) -> Result<(WorldState, ExecutionTrace), BundleError> {
        execute_bundle(&self.world, &self.bundle)
    }

    pub fn is_relocation(&self) -> bool {
        self.recipe.is_relocation()
    }
}

/// Parsed view of a config during building.
struct Ctx<'a> {
    cfg: &'a ScenarioConfig,
    mode: NumericMode,
    assets: BTreeMap<String, AssetId>,
    declared: BTreeSet<String>,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Result<Self, ScenarioError> {
        let mut assets = BTreeMap::new();
        for a in &cfg.assets {
            let id = AssetId::new(&a.symbol, a.decimals)?;
            if assets.insert(a.symbol.clone(), id).is_some() {
                return Err(schema(format!("asset {} declared twice", a.symbol)));
            }
        }
        let mut declared = BTreeSet::new();
        for a in &cfg.addresses {
            if a.id.is_empty() || !declared.insert(a.id.clone()) {
                return Err(schema(format!("address id {:?} empty or declared twice", a.id)));
            }
        }
        for p in &cfg.pools {
            if !declared.insert(p.id.clone()) {
                return Err(schema(format!("pool id {} collides with another id", p.id)));
            }
        }
        Ok(Ctx {
            cfg,
            mode: cfg.params.numeric_mode,
            assets,
            declared,
        })
    }

    fn asset(&self, sym: &str) -> Result<&AssetId, ScenarioError> {
        self.assets.get(sym).ok_or_else(|| schema(format!("unknown asset {sym}")))
    }

    /// `"<decimal> <SYMBOL>"` in the scenario's numeric mode.
    fn amount(&self, literal: &str) -> Result<(AssetId, Amount), ScenarioError> {
        let mut parts = literal.split_whitespace();
        let (Some(num), Some(sym), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(schema(format!("amount {literal:?} must look like \"10 WETH\"")));
        };
        let asset = self.asset(sym)?.clone();
        let amt = Amount::from_tokens(num, &asset, self.mode)?;
        Ok((asset, amt))
    }

    fn address(&self, key: &str, v: &Option<String>) -> Result<Address, ScenarioError> {
        let id = v.as_ref().ok_or_else(|| schema(format!("params.{key} is required by recipe")))?;
        if !self.declared.contains(id) {
            return Err(schema(format!("params.{key} refers to undeclared address {id}")));
        }
        Ok(Address::new(id))
    }

    fn world(&self) -> Result<WorldState, ScenarioError> {
        let mut w = WorldState::new(self.mode);
        w.flash_fee_bps = self.cfg.params.flash_fee_bps;
        for a in self.assets.values() {
            w.add_asset(a.clone());
        }
        for spec in &self.cfg.addresses {
            let addr = Address::new(&spec.id);
            w.label(&addr, spec.role);
            for lit in &spec.balances {
                let (asset, amt) = self.amount(lit)?;
                if w.balances.contains_key(&(addr.clone(), asset.symbol.clone())) {
                    return Err(schema(format!("{} lists {} twice", spec.id, asset.symbol)));
                }
                w.set_balance(&addr, &asset, amt);
            }
        }
        for p in &self.cfg.pools {
            let [r0, r1] = p.reserves.as_slice() else {
                return Err(schema(format!("pool {} needs exactly two reserves", p.id)));
            };
            let (a0, v0) = self.amount(r0)?;
            let (a1, v1) = self.amount(r1)?;
            let fee = self.cfg.params.fee_bps.unwrap_or(p.fee_bps);
            w.add_pool(PoolState::new(&p.id, a0, a1, v0, v1, fee, self.mode)?);
        }
        for al in &self.cfg.allowances {
            for id in [&al.owner, &al.spender] {
                if !self.declared.contains(id) {
                    return Err(schema(format!("allowance refers to undeclared address {id}")));
                }
            }
            let (asset, amt) = self.amount(&al.amount)?;
            w.approve(&Address::new(&al.owner), &Address::new(&al.spender), &asset, amt);
        }
        Ok(w)
    }
}

fn pool_of<'w>(w: &'w WorldState, key: &str, id: &Option<String>) -> Result<&'w PoolState, ScenarioError> {
    let id = id.as_ref().ok_or_else(|| schema(format!("params.{key} is required by recipe")))?;
    w.pool(id).ok_or_else(|| schema(format!("params.{key} refers to unknown pool {id}")))
}

/// Builds a scenario and dry-runs its bundle.
pub fn build_scenario(cfg: &ScenarioConfig) -> Result<Scenario, ScenarioError> {
    let ctx = Ctx::new(cfg)?;
    let world = ctx.world()?;
    let s = match cfg.scenario.recipe {
        Recipe::PebLimitOrder | Recipe::PebFlashSwapVariant => build_peb(&ctx, world)?,
        Recipe::RelocationZeroFee | Recipe::RelocationFeeCalibrated => build_relocation(&ctx, world)?,
        Recipe::BenignArbitrage => build_arbitrage(&ctx, world)?,
        Recipe::BenignRouting => build_routing(&ctx, world)?,
    };
    s.run()?;
    Ok(s)
}

fn scenario(ctx: &Ctx, world: WorldState, bundle: Bundle) -> Scenario {
    Scenario {
        name: ctx.cfg.scenario.name.clone(),
        recipe: ctx.cfg.scenario.recipe,
        config: ctx.cfg.clone(),
        world,
        bundle,
        intents: Vec::new(),
        plan: None,
        calibration: None,
        ground_truth: None,
    }
}

fn build_peb(ctx: &Ctx, world: WorldState) -> Result<Scenario, ScenarioError> {
    let p = &ctx.cfg.params;
    let maker = ctx.address("principal", &p.principal)?;
    let filler = ctx.address("executor", &p.executor)?;
    let receiver = ctx.address("beneficiary", &p.beneficiary)?;
    let settlement = ctx.address("settlement", &p.settlement)?;
    let pool = pool_of(&world, "pool", &p.pool)?.clone();
    let order_spec = p.order.as_ref().ok_or_else(|| schema("params.order is required by recipe"))?;
    let (maker_asset, making) = ctx.amount(&order_spec.making)?;
    let (taker_asset, taking) = ctx.amount(&order_spec.taking)?;
    if !pool.trades(&maker_asset) || !pool.trades(&taker_asset) || maker_asset == taker_asset {
        return Err(schema("params.pool must trade the order's two assets"));
    }
    let order = LimitOrderIntent {
        order_id: order_spec.id.clone(),
        maker: maker.clone(),
        maker_asset: maker_asset.clone(),
        taker_asset: taker_asset.clone(),
        making_amount: making.clone(),
        taking_amount: taking.clone(),
        receiver: receiver.clone(),
        settlement,
    };
    let fill = Action::FillLimitOrder {
        order: order.clone(),
        filler: filler.clone(),
        fill_amount: making.clone(),
        route_via_settlement: p.route_via_settlement,
    };
    let actions = match ctx.cfg.scenario.recipe {
        Recipe::PebLimitOrder => {
            let provider = ctx.address("flash_provider", &p.flash_provider)?;
            vec![
                Action::FlashBorrow {
                    provider: provider.clone(),
                    borrower: filler.clone(),
                    asset: taker_asset.clone(),
                    amount: taking.clone(),
                },
                fill,
                Action::Swap {
                    caller: filler.clone(),
                    pool: pool.pool_id.clone(),
                    input_asset: maker_asset.clone(),
                    amount_in: making.clone(),
                    recipient: filler.clone(),
                },
                Action::FlashRepay {
                    borrower: filler.clone(),
                    provider,
                    asset: taker_asset.clone(),
                    amount: taking.clone(),
                },
            ]
        }
        _ => {
            // Borrow exactly what selling the maker asset would return, so
            // the pool ends where the flash-loan variant's swap leaves it.
            let out = amm::swap_exact_in(&pool, &maker_asset, &making)?.amount_out;
            vec![
                Action::FlashSwapBorrow {
                    pool: pool.pool_id.clone(),
                    borrower: filler.clone(),
                    asset: taker_asset.clone(),
                    amount: out,
                },
                fill,
                Action::FlashSwapRepay {
                    pool: pool.pool_id.clone(),
                    borrower: filler.clone(),
                    asset: maker_asset.clone(),
                    amount: making.clone(),
                },
            ]
        }
    };
    let bundle = Bundle {
        id: ctx.cfg.scenario.name.clone(),
        initiator: filler,
        actions,
    };
    let mut s = scenario(ctx, world, bundle);
    s.intents = vec![order];
    s.ground_truth = Some(GroundTruth {
        principal: maker,
        beneficiary: receiver,
        asset: taker_asset.symbol,
        amount: taking,
    });
    Ok(s)
}

fn observations(spec: &str) -> Result<ObservationSet, ScenarioError> {
    match spec {
        "fork_reference" => Ok(ObservationSet::fork_reference()),
        s if s.trim_start().starts_with('{') => Ok(ObservationSet::from_json(s)?),
        other => Err(schema(format!("unknown observation set {other}"))),
    }
}

fn build_relocation(ctx: &Ctx, mut world: WorldState) -> Result<Scenario, ScenarioError> {
    let p = &ctx.cfg.params;
    let principal = ctx.address("principal", &p.principal)?;
    let beneficiary = ctx.address("beneficiary", &p.beneficiary)?;
    let operator = ctx.address("operator", &p.operator)?;
    let provider = ctx.address("flash_provider", &p.flash_provider)?;
    let (a_asset, a) = ctx.amount(p.a.as_deref().ok_or_else(|| schema("params.a is required by recipe"))?)?;

    let mut calibrated = None;
    let mut flash = match &p.flash_amount {
        Some(lit) => FlashChoice::Given(ctx.amount(lit)?.1),
        None => FlashChoice::Solve,
    };
    let mut style = p.extraction_style;
    let (pool1, pool2) = if ctx.cfg.scenario.recipe == Recipe::RelocationFeeCalibrated {
        let spec = p.observations.as_deref().ok_or_else(|| schema("params.observations is required by recipe"))?;
        let obs = observations(spec)?;
        if obs.asset != a_asset {
            return Err(schema("params.a must be denominated in the observed migrated asset"));
        }
        let cal = calibration::calibrate_reserves(&obs)?;
        let (mut p1, mut p2) = match ctx.mode {
            NumericMode::Integer => cal.integer_pools()?,
            NumericMode::Exact => (cal.pool1.clone(), cal.pool2.clone()),
        };
        p1.pool_id = p.pool1.clone().unwrap_or_else(|| "pool1".into());
        p2.pool_id = p.pool2.clone().unwrap_or_else(|| "pool2".into());
        for pool in [&p1, &p2] {
            if ctx.declared.contains(&pool.pool_id) {
                return Err(schema(format!("calibrated pool id {} collides with an address", pool.pool_id)));
            }
            world.add_pool(pool.clone());
        }
        if p.flash_amount.is_none() {
            flash = FlashChoice::Given(Amount::from_token_value(obs.x.clone(), &a_asset, ctx.mode)?);
        }
        calibrated = Some((cal, obs));
        (p1, p2)
    } else {
        let p1 = pool_of(&world, "pool1", &p.pool1)?.clone();
        let p2 = pool_of(&world, "pool2", &p.pool2)?.clone();
        if p1.fee_bps != 0 || p2.fee_bps != 0 {
            return Err(schema("relocation_zero_fee requires fee_bps = 0 on both pools"));
        }
        (p1, p2)
    };

    let target = match p.target.as_deref() {
        None | Some("return_principal") if calibrated.is_none() => ExtractionTarget::ReturnPrincipal,
        None | Some("observed") => {
            let (cal, obs) = calibrated.as_ref().ok_or_else(|| schema("target \"observed\" needs observations"))?;
            let units = |v: &Scalar, id: &AssetId| Amount::from_token_value(v.clone(), id, ctx.mode);
            match cal.b_prime_reading.unwrap_or(BPrimeReading::FlashBorrow) {
                BPrimeReading::FlashBorrow => {
                    style = ExtractionStyle::FlashSwap;
                    ExtractionTarget::ObservedBPrime(units(&obs.b_prime, &obs.counter_asset)?)
                }
                BPrimeReading::SwapOutput => {
                    style = ExtractionStyle::Swap;
                    ExtractionTarget::ObservedY(units(&obs.y, &obs.asset)?)
                }
            }
        }
        Some("return_principal") => ExtractionTarget::ReturnPrincipal,
        Some("max_profit") => ExtractionTarget::MaxProfit,
        Some(lit) => ExtractionTarget::Exact(ctx.amount(lit)?.1),
    };
    let req = PlanRequest {
        principal: principal.clone(),
        beneficiary: beneficiary.clone(),
        operator,
        flash_provider: provider,
        pool1,
        pool2,
        asset: a_asset.clone(),
        a,
        flash,
        target,
        funding_policy: p.funding_policy.unwrap_or_default(),
        extraction_style: style,
    };
    let plan = planner::plan_relocation(&req)?;
    let bundle = planner::build_relocation_bundle(&plan, &ctx.cfg.scenario.name);
    let mut s = scenario(ctx, world, bundle);
    s.ground_truth = Some(GroundTruth {
        principal,
        beneficiary,
        asset: a_asset.symbol,
        amount: plan.predicted_a_prime.clone(),
    });
    s.plan = Some(plan);
    s.calibration = calibrated.map(|(c, _)| c);
    Ok(s)
}

/// Cross-pool arbitrage by an independent trader funded by flash liquidity,
/// with the profit sent to a wallet of its own.
fn build_arbitrage(ctx: &Ctx, world: WorldState) -> Result<Scenario, ScenarioError> {
    let p = &ctx.cfg.params;
    let trader = ctx.address("executor", &p.executor)?;
    let payee = ctx.address("beneficiary", &p.beneficiary)?;
    let provider = ctx.address("flash_provider", &p.flash_provider)?;
    // The asset is sold into pool2, where it is dearer, and bought back on pool1.
    let sell = pool_of(&world, "pool2", &p.pool2)?.clone();
    let buy = pool_of(&world, "pool1", &p.pool1)?.clone();
    let sym = p.a.as_deref().ok_or_else(|| schema("params.a names the arbitraged asset, e.g. \"0 A\""))?;
    let (asset, _) = ctx.amount(sym)?;
    let max = planner::max_extractable_with(&buy, &sell, &asset, ExtractionStyle::Swap)?;
    if max.is_zero() {
        return Err(schema("pools offer no arbitrage"));
    }
    let ex = planner::solve_extraction(&buy, &sell, &asset, &max, ExtractionStyle::Swap)?;
    let counter = buy.other_asset(&asset)?.clone();
    let actions = vec![
        Action::FlashBorrow {
            provider: provider.clone(),
            borrower: trader.clone(),
            asset: asset.clone(),
            amount: ex.y.clone(),
        },
        Action::Swap {
            caller: trader.clone(),
            pool: sell.pool_id.clone(),
            input_asset: asset.clone(),
            amount_in: ex.y.clone(),
            recipient: trader.clone(),
        },
        Action::Swap {
            caller: trader.clone(),
            pool: buy.pool_id.clone(),
            input_asset: counter,
            amount_in: ex.b_prime.clone(),
            recipient: trader.clone(),
        },
        Action::FlashRepay {
            borrower: trader.clone(),
            provider,
            asset: asset.clone(),
            amount: ex.y.clone(),
        },
        Action::Transfer {
            from: trader.clone(),
            to: payee,
            asset,
            amount: ex.gross,
        },
    ];
    let bundle = Bundle {
        id: ctx.cfg.scenario.name.clone(),
        initiator: trader,
        actions,
    };
    Ok(scenario(ctx, world, bundle))
}

/// A two-hop route through two pools by a single trader.
fn build_routing(ctx: &Ctx, world: WorldState) -> Result<Scenario, ScenarioError> {
    let p = &ctx.cfg.params;
    let trader = ctx.address("principal", &p.principal)?;
    let recipient = match &p.beneficiary {
        Some(_) => ctx.address("beneficiary", &p.beneficiary)?,
        None => trader.clone(),
    };
    let first = pool_of(&world, "pool1", &p.pool1)?.clone();
    let second = pool_of(&world, "pool2", &p.pool2)?.clone();
    let (asset_in, amount) = ctx.amount(p.a.as_deref().ok_or_else(|| schema("params.a is required by recipe"))?)?;
    let hop1 = amm::swap_exact_in(&first, &asset_in, &amount)?;
    let mid = first.other_asset(&asset_in)?.clone();
    if !second.trades(&mid) {
        return Err(schema("pool2 must trade pool1's output asset"));
    }
    let actions = vec![
        Action::Swap {
            caller: trader.clone(),
            pool: first.pool_id.clone(),
            input_asset: asset_in,
            amount_in: amount,
            recipient: trader.clone(),
        },
        Action::Swap {
            caller: trader.clone(),
            pool: second.pool_id.clone(),
            input_asset: mid,
            amount_in: hop1.amount_out,
            recipient,
        },
    ];
    let bundle = Bundle {
        id: ctx.cfg.scenario.name.clone(),
        initiator: trader,
        actions,
    };
    Ok(scenario(ctx, world, bundle))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PebVariant {
    FlashLoan,
    FlashSwap,
}

/// Programmatic parameters of the limit-order scenario, in token units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PebParams {
    pub name: String,
    pub variant: PebVariant,
    pub mode: NumericMode,
    /// Maker sells `making` of the maker asset for `taking` of the taker asset.
    pub making: String,
    pub taking: String,
    pub pool_maker_reserve: String,
    pub pool_taker_reserve: String,
    pub fee_bps: u32,
    pub receiver_is_maker: bool,
    pub route_via_settlement: bool,
}

impl Default for PebParams {
    /// Scaled-down stablecoin conversion: 1,000 USDC for 999 DAI.
    fn default() -> Self {
        PebParams {
            name: "peb_limit_order".into(),
            variant: PebVariant::FlashLoan,
            mode: NumericMode::Integer,
            making: "1000".into(),
            taking: "999".into(),
            pool_maker_reserve: "5000000".into(),
            pool_taker_reserve: "5000000".into(),
            fee_bps: 1,
            receiver_is_maker: false,
            route_via_settlement: true,
        }
    }
}

impl PebParams {
    pub fn to_config(&self) -> ScenarioConfig {
        let receiver = if self.receiver_is_maker { "P" } else { "B" };
        let addr = |id: &str, role: Role, balances: Vec<String>| AddressSpec {
            id: id.into(),
            role,
            balances,
        };
        let mut addresses = vec![addr("P", Role::Principal, vec![format!("{} USDC", self.making)])];
        addresses.push(addr("E", Role::Executor, vec![]));
        if !self.receiver_is_maker {
            addresses.push(addr("B", Role::Beneficiary, vec![]));
        }
        addresses.push(addr("S", Role::SettlementContract, vec![]));
        if self.variant == PebVariant::FlashLoan {
            addresses.push(addr("F", Role::FlashProvider, vec![format!("{} DAI", self.pool_taker_reserve)]));
        }
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            scenario: ScenarioMeta {
                name: self.name.clone(),
                recipe: match self.variant {
                    PebVariant::FlashLoan => Recipe::PebLimitOrder,
                    PebVariant::FlashSwap => Recipe::PebFlashSwapVariant,
                },
                description: String::new(),
            },
            assets: vec![
                AssetSpec {
                    symbol: "USDC".into(),
                    decimals: 6,
                },
                AssetSpec {
                    symbol: "DAI".into(),
                    decimals: 18,
                },
            ],
            addresses,
            pools: vec![PoolSpec {
                id: "V".into(),
                reserves: vec![
                    format!("{} USDC", self.pool_maker_reserve),
                    format!("{} DAI", self.pool_taker_reserve),
                ],
                fee_bps: self.fee_bps,
            }],
            allowances: vec![AllowanceSpec {
                owner: "P".into(),
                spender: "S".into(),
                amount: format!("{} USDC", self.making),
            }],
            params: Params {
                numeric_mode: self.mode,
                route_via_settlement: self.route_via_settlement,
                principal: Some("P".into()),
                executor: Some("E".into()),
                beneficiary: Some(receiver.into()),
                settlement: Some("S".into()),
                flash_provider: (self.variant == PebVariant::FlashLoan).then(|| "F".into()),
                pool: Some("V".into()),
                order: Some(OrderSpec {
                    id: "order-1".into(),
                    making: format!("{} USDC", self.making),
                    taking: format!("{} DAI", self.taking),
                }),
                ..Params::default()
            },
        }
    }
}

pub fn build_peb_scenario(params: &PebParams) -> Result<Scenario, ScenarioError> {
    build_scenario(&params.to_config())
}

/// The same bundle executed by unrelated actors: every externally owned
/// address is renamed and unlabeled, contracts stay as they are, and
/// allowance pulls become transfers from the actor's own wallet.
pub fn build_benign_twin(s: &Scenario) -> Scenario {
    let mut rename: BTreeMap<Address, Address> = BTreeMap::new();
    for (addr, role) in &s.world.labels {
        if !role.is_contract() {
            rename.insert(addr.clone(), Address::new(format!("arb-{}", addr.as_str().to_lowercase())));
        }
    }
    let map = |a: &Address| rename.get(a).cloned().unwrap_or_else(|| a.clone());
    let mut world = WorldState::new(s.world.mode);
    world.flash_fee_bps = s.world.flash_fee_bps;
    world.assets = s.world.assets.clone();
    world.pools = s.world.pools.clone();
    world.order_fills = s.world.order_fills.clone();
    for (addr, role) in &s.world.labels {
        world.labels.insert(map(addr), if role.is_contract() { *role } else { Role::Unlabeled });
    }
    world.balances = s.world.balances.iter().map(|((a, sym), v)| ((map(a), sym.clone()), v.clone())).collect();
    let bundle = Bundle {
        id: format!("{}-benign-twin", s.bundle.id),
        initiator: map(&s.bundle.initiator),
        actions: s
            .bundle
            .actions
            .iter()
            .map(|a| match a.map_addresses(&map) {
                // The twin funds itself from its own wallet instead of an
                // allowance pull.
                Action::TransferFrom {
                    owner, to, asset, amount, ..
                } => Action::Transfer {
                    from: owner,
                    to,
                    asset,
                    amount,
                },
                other => other,
            })
            .collect(),
    };
    let intents = s
        .intents
        .iter()
        .map(|o| LimitOrderIntent {
            maker: map(&o.maker),
            receiver: map(&o.receiver),
            settlement: map(&o.settlement),
            ..o.clone()
        })
        .collect();
    Scenario {
        name: format!("{}-benign-twin", s.name),
        recipe: Recipe::BenignArbitrage,
        config: s.config.clone(),
        world,
        bundle,
        intents,
        plan: None,
        calibration: None,
        ground_truth: None,
    }
}

const BUILTINS: &[(&str, &str)] = &[
    ("peb_limit_order", include_str!("../scenarios/peb_limit_order.toml")),
    ("peb_flash_swap", include_str!("../scenarios/peb_flash_swap.toml")),
    ("peb_receiver_is_maker", include_str!("../scenarios/peb_receiver_is_maker.toml")),
    ("relocation_sym", include_str!("../scenarios/relocation_sym.toml")),
    ("relocation_zero_fee_asym", include_str!("../scenarios/relocation_zero_fee_asym.toml")),
    ("relocation_operator_is_principal", include_str!("../scenarios/relocation_operator_is_principal.toml")),
    ("relocation_swap_style", include_str!("../scenarios/relocation_swap_style.toml")),
    ("relocation_fork_calibrated", include_str!("../scenarios/relocation_fork_calibrated.toml")),
    ("benign_arbitrage", include_str!("../scenarios/benign_arbitrage.toml")),
    ("benign_routing", include_str!("../scenarios/benign_routing.toml")),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|(n, _)| *n).collect()
}

pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn builtin(name: &str) -> Result<Scenario, ScenarioError> {
    let text = builtin_source(name).ok_or_else(|| ScenarioError::UnknownBuiltin(name.into()))?;
    build_scenario(&ScenarioConfig::from_toml(text)?)
}

/// Every built-in scenario, in declaration order.
pub fn library() -> Result<Vec<Scenario>, ScenarioError> {
    builtin_names().into_iter().map(builtin).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{delta_of, net_deltas};

    #[test]
    fn every_builtin_builds_and_runs() {
        for s in library().unwrap() {
            let (_, trace) = s.run().unwrap();
            assert!(!trace.events.is_empty(), "{}", s.name);
            assert_eq!(s.config, ScenarioConfig::from_toml(builtin_source(&s.name).unwrap()).unwrap());
        }
    }

    #[test]
    fn replay_is_byte_deterministic() {
        for name in builtin_names() {
            let a = builtin(name).unwrap().run().unwrap().1.to_json();
            let b = builtin(name).unwrap().run().unwrap().1.to_json();
            assert_eq!(a, b, "{name}");
        }
    }

    #[test]
    fn peb_default_structure() {
        let s = build_peb_scenario(&PebParams::default()).unwrap();
        let (_, trace) = s.run().unwrap();
        let (p, e, b) = (Address::new("P"), Address::new("E"), Address::new("B"));
        assert_eq!(trace.initiator, e);
        assert_ne!(trace.initiator, p);
        assert!(trace.events.iter().all(|ev| !(ev.from == p && ev.to == b)));
        let d = net_deltas(&trace);
        assert!(delta_of(&d, &p, "USDC").is_negative());
        assert!(delta_of(&d, &b, "DAI").is_positive());
        assert!(delta_of(&d, &e, "USDC").is_zero());
        assert!(!delta_of(&d, &e, "DAI").is_negative());
        let roles: BTreeSet<Role> = [&p, &e, &b].iter().map(|a| trace.label(a)).collect();
        assert_eq!(roles.len(), 3);
    }

    #[test]
    fn receiver_equal_to_maker_ends_at_maker() {
        let s = build_peb_scenario(&PebParams {
            receiver_is_maker: true,
            ..PebParams::default()
        })
        .unwrap();
        let (_, trace) = s.run().unwrap();
        let d = net_deltas(&trace);
        let p = Address::new("P");
        assert!(delta_of(&d, &p, "DAI").is_positive());
        assert_eq!(s.ground_truth.unwrap().beneficiary, p);
    }

    #[test]
    fn flash_swap_variant_has_identical_deltas() {
        let loan = build_peb_scenario(&PebParams::default()).unwrap();
        let swap = build_peb_scenario(&PebParams {
            variant: PebVariant::FlashSwap,
            ..PebParams::default()
        })
        .unwrap();
        assert_eq!(net_deltas(&loan.run().unwrap().1), net_deltas(&swap.run().unwrap().1));
    }

    #[test]
    fn twin_is_a_relabeling() {
        let s = builtin("relocation_sym").unwrap();
        let twin = build_benign_twin(&s);
        let (_, trace) = twin.run().unwrap();
        assert!(trace.labels.values().all(|r| r.is_contract() || *r == Role::Unlabeled));
        assert_eq!(trace.events.len(), s.run().unwrap().1.events.len());
        assert!(twin.ground_truth.is_none());
    }

    #[test]
    fn malformed_configs_are_rejected() {
        let good = builtin_source("relocation_sym").unwrap();
        let bad_version = good.replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(ScenarioConfig::from_toml(&bad_version), Err(ScenarioError::Schema(_))));
        let unknown_key = good.replace("[params]", "[params]\nbogus = 1");
        assert!(matches!(ScenarioConfig::from_toml(&unknown_key), Err(ScenarioError::Parse(_))));
        let bad_amount = good.replace("\"10 A\"", "\"10A\"");
        let cfg = ScenarioConfig::from_toml(&bad_amount).unwrap();
        assert!(matches!(build_scenario(&cfg), Err(ScenarioError::Schema(_))));
        let fee = good.replace("fee_bps = 0", "fee_bps = 30");
        let cfg = ScenarioConfig::from_toml(&fee).unwrap();
        assert!(build_scenario(&cfg).is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = PebParams::default().to_config();
        assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
