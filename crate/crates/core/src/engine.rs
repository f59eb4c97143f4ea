//! Atomic bundle execution over a [`WorldState`].
//!
//! A bundle is an ordered list of [`Action`]s applied all-or-nothing. Every
//! balance movement is recorded as a [`TransferEvent`]; the resulting
//! [`ExecutionTrace`] is the ground truth for both observers.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amm::{self, AmmError, Amount, AssetId, NumericMode, PoolState, BPS_DENOM};
use crate::numeric::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub String);

impl Address {
    pub fn new(id: impl Into<String>) -> Self {
        Address(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Address {
    fn from(s: &str) -> Self {
        Address(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Principal,
    Executor,
    Beneficiary,
    Operator,
    PoolContract,
    FlashProvider,
    SettlementContract,
    #[default]
    Unlabeled,
}

impl Role {
    /// Protocol contracts, as opposed to externally owned accounts.
    pub fn is_contract(self) -> bool {
        matches!(self, Role::PoolContract | Role::FlashProvider | Role::SettlementContract)
    }

    pub fn tag(self) -> &'static str {
        match self {
            Role::Principal => "principal",
            Role::Executor => "executor",
            Role::Beneficiary => "beneficiary",
            Role::Operator => "operator",
            Role::PoolContract => "pool",
            Role::FlashProvider => "flash_provider",
            Role::SettlementContract => "settlement",
            Role::Unlabeled => "unlabeled",
        }
    }
}

/// Off-chain signed limit order. Authorization data only; it never appears
/// as an action of its own.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LimitOrderIntent {
    pub order_id: String,
    pub maker: Address,
    pub maker_asset: AssetId,
    pub taker_asset: AssetId,
    pub making_amount: Amount,
    pub taking_amount: Amount,
    pub receiver: Address,
    /// Settlement contract the maker approved.
    pub settlement: Address,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Transfer {
        from: Address,
        to: Address,
        asset: AssetId,
        amount: Amount,
    },
    TransferFrom {
        owner: Address,
        spender: Address,
        to: Address,
        asset: AssetId,
        amount: Amount,
    },
    Swap {
        caller: Address,
        pool: String,
        input_asset: AssetId,
        amount_in: Amount,
        recipient: Address,
    },
    FlashBorrow {
        provider: Address,
        borrower: Address,
        asset: AssetId,
        amount: Amount,
    },
    FlashRepay {
        borrower: Address,
        provider: Address,
        asset: AssetId,
        amount: Amount,
    },
    FlashSwapBorrow {
        pool: String,
        borrower: Address,
        asset: AssetId,
        amount: Amount,
    },
    FlashSwapRepay {
        pool: String,
        borrower: Address,
        asset: AssetId,
        amount: Amount,
    },
    FillLimitOrder {
        order: LimitOrderIntent,
        filler: Address,
        fill_amount: Amount,
        route_via_settlement: bool,
    },
}

impl Action {
    pub fn kind(&self) -> &'static str {
        match self {
            Action::Transfer { .. } => "transfer",
            Action::TransferFrom { .. } => "transfer_from",
            Action::Swap { .. } => "swap",
            Action::FlashBorrow { .. } => "flash_borrow",
            Action::FlashRepay { .. } => "flash_repay",
            Action::FlashSwapBorrow { .. } => "flash_swap_borrow",
            Action::FlashSwapRepay { .. } => "flash_swap_repay",
            Action::FillLimitOrder { .. } => "fill_limit_order",
        }
    }

    /// Replaces every address with `f(address)`; pool ids are kept.
    pub fn map_addresses(&self, f: &impl Fn(&Address) -> Address) -> Action {
        let mut a = self.clone();
        match &mut a {
            Action::Transfer { from, to, .. } => {
                *from = f(from);
                *to = f(to);
            }
            Action::TransferFrom { owner, spender, to, .. } => {
                *owner = f(owner);
                *spender = f(spender);
                *to = f(to);
            }
            Action::Swap { caller, recipient, .. } => {
                *caller = f(caller);
                *recipient = f(recipient);
            }
            Action::FlashBorrow { provider, borrower, .. } | Action::FlashRepay { provider, borrower, .. } => {
                *provider = f(provider);
                *borrower = f(borrower);
            }
            Action::FlashSwapBorrow { borrower, .. } | Action::FlashSwapRepay { borrower, .. } => {
                *borrower = f(borrower);
            }
            Action::FillLimitOrder { order, filler, .. } => {
                order.maker = f(&order.maker);
                order.receiver = f(&order.receiver);
                order.settlement = f(&order.settlement);
                *filler = f(filler);
            }
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bundle {
    pub id: String,
    /// Transaction sender (`msg.sender` of the outer call).
    pub initiator: Address,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferEvent {
    pub seq: u64,
    pub from: Address,
    pub to: Address,
    pub asset: String,
    pub amount: Amount,
    pub action_index: usize,
    pub bundle_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CallDetail {
    None,
    /// A priced trade against a pool; flash swaps report their settled
    /// borrow/repay pair here.
    Trade {
        pool: String,
        input_asset: String,
        amount_in: Amount,
        output_asset: String,
        amount_out: Amount,
        fee_bps: u32,
    },
    Pull {
        owner: Address,
    },
    Fill {
        order_id: String,
        maker: Address,
        receiver: Address,
        maker_asset: String,
        taker_asset: String,
        making: Amount,
        taking: Amount,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub action_index: usize,
    pub kind: String,
    pub caller: Address,
    pub callee: Address,
    pub detail: CallDetail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub bundle_id: String,
    pub initiator: Address,
    pub numeric_mode: NumericMode,
    pub assets: Vec<AssetId>,
    pub labels: BTreeMap<Address, Role>,
    pub calls: Vec<CallRecord>,
    pub events: Vec<TransferEvent>,
}

impl ExecutionTrace {
    pub fn asset(&self, symbol: &str) -> Option<&AssetId> {
        self.assets.iter().find(|a| a.symbol == symbol)
    }

    pub fn label(&self, addr: &Address) -> Role {
        self.labels.get(addr).copied().unwrap_or_default()
    }

    /// Addresses carrying `role`, in id order.
    pub fn addresses_with(&self, role: Role) -> Vec<Address> {
        self.labels
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(a, _)| a.clone())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BundleError {
    #[error("bundle has no actions")]
    EmptyBundle,
    #[error("action {index}: {address} holds {available} {asset}, needs {required}")]
    InsufficientBalance {
        index: usize,
        address: Address,
        asset: String,
        available: String,
        required: String,
    },
    #[error("action {index}: {spender} may move {available} {asset} of {owner}, needs {required}")]
    InsufficientAllowance {
        index: usize,
        owner: Address,
        spender: Address,
        asset: String,
        available: String,
        required: String,
    },
    #[error("{borrower} still owes {outstanding} {asset} to {lender} at end of bundle")]
    UnrepaidFlashDebt {
        borrower: Address,
        lender: Address,
        asset: String,
        outstanding: String,
    },
    #[error("action {index}: fee-adjusted invariant of pool {pool} violated on flash swap repay")]
    FlashSwapInvariantViolation { index: usize, pool: String },
    #[error("action {index}: repay of {amount} {asset} exceeds outstanding debt {outstanding}")]
    RepayExceedsDebt {
        index: usize,
        asset: String,
        amount: String,
        outstanding: String,
    },
    #[error("action {index}: order {order_id} has {remaining} left, fill requested {requested}")]
    Overfill {
        index: usize,
        order_id: String,
        remaining: String,
        requested: String,
    },
    #[error("action {index}: unknown pool {pool}")]
    UnknownPool { index: usize, pool: String },
    #[error("action {index}: pool {pool} is locked by an open flash swap")]
    PoolLocked { index: usize, pool: String },
    #[error("action {index}: {reason}")]
    InvalidAction { index: usize, reason: String },
    #[error("action {index}: {source}")]
    Amm { index: usize, source: AmmError },
}

/// Balances, pools and allowances of a simulated chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldState {
    pub mode: NumericMode,
    pub labels: BTreeMap<Address, Role>,
    pub assets: BTreeMap<String, AssetId>,
    pub balances: BTreeMap<(Address, String), Amount>,
    pub pools: BTreeMap<String, PoolState>,
    pub allowances: BTreeMap<(Address, Address, String), Amount>,
    pub order_fills: BTreeMap<String, Amount>,
    /// Flash-loan premium charged by providers.
    pub flash_fee_bps: u32,
}

impl WorldState {
    pub fn new(mode: NumericMode) -> Self {
        WorldState {
            mode,
            labels: BTreeMap::new(),
            assets: BTreeMap::new(),
            balances: BTreeMap::new(),
            pools: BTreeMap::new(),
            allowances: BTreeMap::new(),
            order_fills: BTreeMap::new(),
            flash_fee_bps: 0,
        }
    }

    pub fn add_asset(&mut self, asset: AssetId) {
        self.assets.insert(asset.symbol.clone(), asset);
    }

    pub fn label(&mut self, addr: &Address, role: Role) {
        self.labels.insert(addr.clone(), role);
    }

    pub fn set_balance(&mut self, addr: &Address, asset: &AssetId, amount: Amount) {
        self.add_asset(asset.clone());
        self.labels.entry(addr.clone()).or_default();
        if amount.is_zero() {
            self.balances.remove(&(addr.clone(), asset.symbol.clone()));
        } else {
            self.balances.insert((addr.clone(), asset.symbol.clone()), amount);
        }
    }

    pub fn add_pool(&mut self, pool: PoolState) {
        self.add_asset(pool.asset0.clone());
        self.add_asset(pool.asset1.clone());
        self.labels.insert(Address::new(&pool.pool_id), Role::PoolContract);
        self.pools.insert(pool.pool_id.clone(), pool);
    }

    pub fn approve(&mut self, owner: &Address, spender: &Address, asset: &AssetId, amount: Amount) {
        self.allowances
            .insert((owner.clone(), spender.clone(), asset.symbol.clone()), amount);
    }

    pub fn allowance(&self, owner: &Address, spender: &Address, asset: &str) -> Amount {
        self.allowances
            .get(&(owner.clone(), spender.clone(), asset.to_string()))
            .cloned()
            .unwrap_or_default()
    }

    pub fn pool(&self, id: &str) -> Option<&PoolState> {
        self.pools.get(id)
    }

    fn pool_for_address(&self, addr: &Address) -> Option<&PoolState> {
        self.pools.get(addr.as_str())
    }

    /// What `addr` holds of `asset`; pool reserves count as the pool's balance.
    pub fn holdings(&self, addr: &Address, asset: &str) -> Amount {
        if let Some(pool) = self.pool_for_address(addr) {
            if let Some(a) = self.assets.get(asset) {
                if let Ok(r) = pool.reserve_of(a) {
                    return r.clone();
                }
            }
        }
        self.balances
            .get(&(addr.clone(), asset.to_string()))
            .cloned()
            .unwrap_or_default()
    }

    pub fn total_supply(&self, asset: &str) -> Scalar {
        let held: Scalar = self
            .balances
            .iter()
            .filter(|((_, s), _)| s == asset)
            .map(|(_, v)| v.value().clone())
            .sum();
        let pooled: Scalar = self
            .pools
            .values()
            .filter_map(|p| self.assets.get(asset).and_then(|a| p.reserve_of(a).ok()))
            .map(|v| v.value().clone())
            .sum();
        held + pooled
    }

    /// Runs `bundle` and commits the result only on success.
    pub fn apply_bundle(&mut self, bundle: &Bundle) -> Result<ExecutionTrace, BundleError> {
        let (next, trace) = execute_bundle(self, bundle)?;
        *self = next;
        Ok(trace)
    }
}

struct Executor<'a> {
    world: WorldState,
    bundle: &'a Bundle,
    index: usize,
    events: Vec<TransferEvent>,
    calls: Vec<CallRecord>,
    flash_debts: BTreeMap<(Address, Address, String), Scalar>,
    open_flash_swaps: BTreeMap<String, (Address, PoolState)>,
}

impl<'a> Executor<'a> {
    fn amm_err(&self, source: AmmError) -> BundleError {
        BundleError::Amm {
            index: self.index,
            source,
        }
    }

    fn invalid(&self, reason: impl Into<String>) -> BundleError {
        BundleError::InvalidAction {
            index: self.index,
            reason: reason.into(),
        }
    }

    fn check_asset(&self, asset: &AssetId) -> Result<(), BundleError> {
        match self.world.assets.get(&asset.symbol) {
            Some(a) if a == asset => Ok(()),
            Some(_) => Err(self.invalid(format!("asset {} redeclared with other decimals", asset.symbol))),
            None => Err(self.invalid(format!("unknown asset {}", asset.symbol))),
        }
    }

    fn check_amount(&self, amount: &Amount) -> Result<(), BundleError> {
        if self.world.mode == NumericMode::Integer && !amount.value().is_integer() {
            return Err(self.amm_err(AmmError::FractionalAmount(amount.to_string())));
        }
        Ok(())
    }

    fn pool_mut(&mut self, id: &str) -> Result<&mut PoolState, BundleError> {
        let index = self.index;
        self.world.pools.get_mut(id).ok_or(BundleError::UnknownPool {
            index,
            pool: id.to_string(),
        })
    }

    /// Moves funds and records the event. Pool addresses move reserves.
    fn move_funds(&mut self, from: &Address, to: &Address, asset: &AssetId, amount: &Amount) -> Result<(), BundleError> {
        self.check_asset(asset)?;
        self.check_amount(amount)?;
        if amount.is_zero() {
            return Ok(());
        }
        let available = self.world.holdings(from, &asset.symbol);
        let Some(rest) = available.checked_sub(amount) else {
            return Err(BundleError::InsufficientBalance {
                index: self.index,
                address: from.clone(),
                asset: asset.symbol.clone(),
                available: available.to_string(),
                required: amount.to_string(),
            });
        };
        if self.world.pools.contains_key(from.as_str()) {
            if rest.is_zero() {
                return Err(self.invalid(format!("transfer would empty pool {from}")));
            }
            let index = self.index;
            let p = self.pool_mut(from.as_str())?;
            *p = p.with_reserve(asset, rest).map_err(|e| BundleError::Amm { index, source: e })?;
        } else {
            self.world.set_balance(from, asset, rest);
        }
        let have = self.world.holdings(to, &asset.symbol);
        let after = &have + amount;
        if self.world.pools.contains_key(to.as_str()) {
            let index = self.index;
            let p = self.pool_mut(to.as_str())?;
            *p = p.with_reserve(asset, after).map_err(|e| BundleError::Amm { index, source: e })?;
        } else {
            self.world.set_balance(to, asset, after);
        }
        self.world.labels.entry(to.clone()).or_default();
        self.events.push(TransferEvent {
            seq: self.events.len() as u64 + 1,
            from: from.clone(),
            to: to.clone(),
            asset: asset.symbol.clone(),
            amount: amount.clone(),
            action_index: self.index,
            bundle_id: self.bundle.id.clone(),
        });
        Ok(())
    }

    fn call(&mut self, kind: &str, caller: &Address, callee: &Address, detail: CallDetail) {
        self.calls.push(CallRecord {
            action_index: self.index,
            kind: kind.to_string(),
            caller: caller.clone(),
            callee: callee.clone(),
            detail,
        });
    }

    fn ensure_unlocked(&self, pool: &str) -> Result<(), BundleError> {
        if self.open_flash_swaps.contains_key(pool) {
            return Err(BundleError::PoolLocked {
                index: self.index,
                pool: pool.to_string(),
            });
        }
        Ok(())
    }

    fn apply(&mut self, action: &Action) -> Result<(), BundleError> {
        match action {
            Action::Transfer { from, to, asset, amount } => {
                self.move_funds(from, to, asset, amount)?;
                self.call("transfer", from, to, CallDetail::None);
            }
            Action::TransferFrom {
                owner,
                spender,
                to,
                asset,
                amount,
            } => {
                let allowed = self.world.allowance(owner, spender, &asset.symbol);
                let Some(rest) = allowed.checked_sub(amount) else {
                    return Err(BundleError::InsufficientAllowance {
                        index: self.index,
                        owner: owner.clone(),
                        spender: spender.clone(),
                        asset: asset.symbol.clone(),
                        available: allowed.to_string(),
                        required: amount.to_string(),
                    });
                };
                self.world.approve(owner, spender, asset, rest);
                self.move_funds(owner, to, asset, amount)?;
                self.call("transfer_from", spender, owner, CallDetail::Pull { owner: owner.clone() });
            }
            Action::Swap {
                caller,
                pool,
                input_asset,
                amount_in,
                recipient,
            } => {
                self.ensure_unlocked(pool)?;
                let state = self
                    .world
                    .pool(pool)
                    .cloned()
                    .ok_or(BundleError::UnknownPool {
                        index: self.index,
                        pool: pool.clone(),
                    })?;
                let outcome = amm::swap_exact_in(&state, input_asset, amount_in).map_err(|e| self.amm_err(e))?;
                let output_asset = state.other_asset(input_asset).map_err(|e| self.amm_err(e))?.clone();
                let pool_addr = Address::new(pool);
                self.move_funds(caller, &pool_addr, input_asset, amount_in)?;
                self.move_funds(&pool_addr, recipient, &output_asset, &outcome.amount_out)?;
                debug_assert_eq!(self.world.pool(pool), Some(&outcome.pool));
                self.call(
                    "swap",
                    caller,
                    &pool_addr,
                    CallDetail::Trade {
                        pool: pool.clone(),
                        input_asset: input_asset.symbol.clone(),
                        amount_in: amount_in.clone(),
                        output_asset: output_asset.symbol,
                        amount_out: outcome.amount_out,
                        fee_bps: state.fee_bps,
                    },
                );
            }
            Action::FlashBorrow {
                provider,
                borrower,
                asset,
                amount,
            } => {
                self.move_funds(provider, borrower, asset, amount)?;
                let premium = amount.value() * &Scalar::from_ratio(i64::from(self.world.flash_fee_bps), i64::from(BPS_DENOM));
                let premium = match self.world.mode {
                    NumericMode::Exact => premium,
                    NumericMode::Integer => Scalar::from_int(premium.ceil()),
                };
                let key = (borrower.clone(), provider.clone(), asset.symbol.clone());
                let debt = self.flash_debts.entry(key).or_default();
                *debt = &*debt + &(amount.value() + &premium);
                self.call("flash_borrow", borrower, provider, CallDetail::None);
            }
            Action::FlashRepay {
                borrower,
                provider,
                asset,
                amount,
            } => {
                let key = (borrower.clone(), provider.clone(), asset.symbol.clone());
                let outstanding = self.flash_debts.get(&key).cloned().unwrap_or_default();
                if *amount.value() > outstanding {
                    return Err(BundleError::RepayExceedsDebt {
                        index: self.index,
                        asset: asset.symbol.clone(),
                        amount: amount.to_string(),
                        outstanding: outstanding.to_string(),
                    });
                }
                self.move_funds(borrower, provider, asset, amount)?;
                let rest = outstanding - amount.value();
                if rest.is_zero() {
                    self.flash_debts.remove(&key);
                } else {
                    self.flash_debts.insert(key, rest);
                }
                self.call("flash_repay", borrower, provider, CallDetail::None);
            }
            Action::FlashSwapBorrow {
                pool,
                borrower,
                asset,
                amount,
            } => {
                self.ensure_unlocked(pool)?;
                let state = self
                    .world
                    .pool(pool)
                    .cloned()
                    .ok_or(BundleError::UnknownPool {
                        index: self.index,
                        pool: pool.clone(),
                    })?;
                let reserve = state.reserve_of(asset).map_err(|e| self.amm_err(e))?;
                if amount >= reserve {
                    return Err(self.amm_err(AmmError::OutputNotLessThanReserve(amount.to_string(), reserve.to_string())));
                }
                let pool_addr = Address::new(pool);
                self.move_funds(&pool_addr, borrower, asset, amount)?;
                self.open_flash_swaps.insert(pool.clone(), (borrower.clone(), state));
                self.call("flash_swap_borrow", borrower, &pool_addr, CallDetail::None);
            }
            Action::FlashSwapRepay {
                pool,
                borrower,
                asset,
                amount,
            } => {
                let Some((owner, before)) = self.open_flash_swaps.get(pool).cloned() else {
                    return Err(self.invalid(format!("no open flash swap on pool {pool}")));
                };
                if owner != *borrower {
                    return Err(self.invalid(format!("flash swap on {pool} belongs to {owner}")));
                }
                let pool_addr = Address::new(pool);
                self.move_funds(borrower, &pool_addr, asset, amount)?;
                let after = self.world.pool(pool).cloned().expect("pool exists");
                if !after.flash_invariant_holds(&before) {
                    return Err(BundleError::FlashSwapInvariantViolation {
                        index: self.index,
                        pool: pool.clone(),
                    });
                }
                self.open_flash_swaps.remove(pool);
                // Report the settled borrow/repay pair as a trade.
                let out_asset = before.other_asset(asset).map_err(|e| self.amm_err(e))?.clone();
                let borrowed_other = before
                    .reserve_of(&out_asset)
                    .map_err(|e| self.amm_err(e))?
                    .checked_sub(after.reserve_of(&out_asset).map_err(|e| self.amm_err(e))?)
                    .unwrap_or_default();
                let (output_asset, amount_out) = if borrowed_other.is_zero() {
                    (asset.symbol.clone(), Amount::zero())
                } else {
                    (out_asset.symbol.clone(), borrowed_other)
                };
                self.call(
                    "flash_swap_repay",
                    borrower,
                    &pool_addr,
                    CallDetail::Trade {
                        pool: pool.clone(),
                        input_asset: asset.symbol.clone(),
                        amount_in: amount.clone(),
                        output_asset,
                        amount_out,
                        fee_bps: before.fee_bps,
                    },
                );
            }
            Action::FillLimitOrder {
                order,
                filler,
                fill_amount,
                route_via_settlement,
            } => self.fill(order, filler, fill_amount, *route_via_settlement)?,
        }
        Ok(())
    }

    fn fill(&mut self, order: &LimitOrderIntent, filler: &Address, fill: &Amount, route: bool) -> Result<(), BundleError> {
        if order.making_amount.is_zero() || order.taking_amount.is_zero() {
            return Err(self.invalid("order amounts must be positive"));
        }
        if fill.is_zero() {
            return Err(self.amm_err(AmmError::ZeroInput));
        }
        let filled = self.world.order_fills.get(&order.order_id).cloned().unwrap_or_default();
        let remaining = order.making_amount.checked_sub(&filled).unwrap_or_default();
        if fill > &remaining {
            return Err(BundleError::Overfill {
                index: self.index,
                order_id: order.order_id.clone(),
                remaining: remaining.to_string(),
                requested: fill.to_string(),
            });
        }
        // Pro-rata taking side, rounded in the maker's favour.
        let taking = fill.value() * order.taking_amount.value() / order.making_amount.value();
        let taking = match self.world.mode {
            NumericMode::Exact => taking,
            NumericMode::Integer => Scalar::from_int(taking.ceil()),
        };
        let taking = Amount::new(taking).map_err(|e| self.amm_err(e))?;
        let allowed = self
            .world
            .allowance(&order.maker, &order.settlement, &order.maker_asset.symbol);
        let Some(rest) = allowed.checked_sub(fill) else {
            return Err(BundleError::InsufficientAllowance {
                index: self.index,
                owner: order.maker.clone(),
                spender: order.settlement.clone(),
                asset: order.maker_asset.symbol.clone(),
                available: allowed.to_string(),
                required: fill.to_string(),
            });
        };
        self.world
            .approve(&order.maker, &order.settlement, &order.maker_asset, rest);
        if route {
            self.move_funds(&order.maker, &order.settlement, &order.maker_asset, fill)?;
            self.move_funds(&order.settlement, filler, &order.maker_asset, fill)?;
        } else {
            self.move_funds(&order.maker, filler, &order.maker_asset, fill)?;
        }
        self.move_funds(filler, &order.receiver, &order.taker_asset, &taking)?;
        self.world
            .order_fills
            .insert(order.order_id.clone(), &filled + fill);
        self.call(
            "fill_limit_order",
            filler,
            &order.settlement,
            CallDetail::Fill {
                order_id: order.order_id.clone(),
                maker: order.maker.clone(),
                receiver: order.receiver.clone(),
                maker_asset: order.maker_asset.symbol.clone(),
                taker_asset: order.taker_asset.symbol.clone(),
                making: fill.clone(),
                taking,
            },
        );
        Ok(())
    }

    fn finish(self) -> Result<(WorldState, ExecutionTrace), BundleError> {
        if let Some(((borrower, lender, asset), outstanding)) = self.flash_debts.iter().find(|(_, v)| !v.is_zero()) {
            return Err(BundleError::UnrepaidFlashDebt {
                borrower: borrower.clone(),
                lender: lender.clone(),
                asset: asset.clone(),
                outstanding: outstanding.to_string(),
            });
        }
        if let Some((pool, (borrower, before))) = self.open_flash_swaps.iter().next() {
            let now = self.world.pool(pool).expect("pool exists");
            let asset = if now.reserve0 < before.reserve0 { &now.asset0 } else { &now.asset1 };
            return Err(BundleError::UnrepaidFlashDebt {
                borrower: borrower.clone(),
                lender: Address::new(pool),
                asset: asset.symbol.clone(),
                outstanding: "open flash swap".into(),
            });
        }
        let trace = ExecutionTrace {
            bundle_id: self.bundle.id.clone(),
            initiator: self.bundle.initiator.clone(),
            numeric_mode: self.world.mode,
            assets: self.world.assets.values().cloned().collect(),
            labels: self.world.labels.clone(),
            calls: self.calls,
            events: self.events,
        };
        Ok((self.world, trace))
    }
}

/// Applies `bundle` to a copy of `world`. On error the input is untouched
/// and no partial state escapes.
pub fn execute_bundle(world: &WorldState, bundle: &Bundle) -> Result<(WorldState, ExecutionTrace), BundleError> {
    if bundle.actions.is_empty() {
        return Err(BundleError::EmptyBundle);
    }
    let mut exec = Executor {
        world: world.clone(),
        bundle,
        index: 0,
        events: Vec::new(),
        calls: Vec::new(),
        flash_debts: BTreeMap::new(),
        open_flash_swaps: BTreeMap::new(),
    };
    exec.world.labels.entry(bundle.initiator.clone()).or_default();
    for (i, action) in bundle.actions.iter().enumerate() {
        exec.index = i;
        exec.apply(action)?;
    }
    exec.finish()
}

/// Signed balance change per (address, asset symbol); zero entries dropped.
pub type Deltas = BTreeMap<(Address, String), Scalar>;

pub fn net_deltas(trace: &ExecutionTrace) -> Deltas {
    let mut out: Deltas = BTreeMap::new();
    for e in &trace.events {
        let v = e.amount.value();
        let from = out.entry((e.from.clone(), e.asset.clone())).or_default();
        *from = &*from - v;
        let to = out.entry((e.to.clone(), e.asset.clone())).or_default();
        *to = &*to + v;
    }
    out.retain(|_, v| !v.is_zero());
    out
}

/// Delta of one address in one asset (zero when absent).
pub fn delta_of(deltas: &Deltas, addr: &Address, asset: &str) -> Scalar {
    deltas
        .get(&(addr.clone(), asset.to_string()))
        .cloned()
        .unwrap_or_default()
}

/// Fills `order` as a stand-alone single-action bundle sent by `filler`.
pub fn fill_limit_order(
    world: &WorldState,
    order: &LimitOrderIntent,
    filler: &Address,
    fill_amount: &Amount,
) -> Result<(WorldState, Vec<TransferEvent>), BundleError> {
    let bundle = Bundle {
        id: format!("fill-{}", order.order_id),
        initiator: filler.clone(),
        actions: vec![Action::FillLimitOrder {
            order: order.clone(),
            filler: filler.clone(),
            fill_amount: fill_amount.clone(),
            route_via_settlement: true,
        }],
    };
    let (w, trace) = execute_bundle(world, &bundle)?;
    Ok((w, trace.events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn asset(s: &str) -> AssetId {
        AssetId::new(s, 18).unwrap()
    }

    fn amt(v: i64) -> Amount {
        Amount::from_int(v)
    }

    fn addr(s: &str) -> Address {
        Address::new(s)
    }

    fn base_world() -> WorldState {
        let mut w = WorldState::new(NumericMode::Exact);
        let (a, b) = (asset("A"), asset("B"));
        w.add_asset(a.clone());
        w.add_asset(b.clone());
        w.label(&addr("P"), Role::Principal);
        w.label(&addr("B"), Role::Beneficiary);
        w.label(&addr("E"), Role::Executor);
        w.label(&addr("F"), Role::FlashProvider);
        w.set_balance(&addr("P"), &a, amt(10));
        w.set_balance(&addr("F"), &a, amt(1000));
        w.add_pool(PoolState::new("P1", a, b, amt(100), amt(100), 0, NumericMode::Exact).unwrap());
        w
    }

    fn bundle(initiator: &str, actions: Vec<Action>) -> Bundle {
        Bundle {
            id: "b1".into(),
            initiator: addr(initiator),
            actions,
        }
    }

    #[test]
    fn single_transfer() {
        let w = base_world();
        let b = bundle(
            "P",
            vec![Action::Transfer {
                from: addr("P"),
                to: addr("B"),
                asset: asset("A"),
                amount: amt(10),
            }],
        );
        let (after, trace) = execute_bundle(&w, &b).unwrap();
        assert_eq!(after.holdings(&addr("P"), "A"), Amount::zero());
        assert_eq!(after.holdings(&addr("B"), "A"), amt(10));
        assert_eq!(trace.events.len(), 1);
        let d = net_deltas(&trace);
        assert_eq!(delta_of(&d, &addr("P"), "A"), Scalar::from_int(-10));
        assert_eq!(delta_of(&d, &addr("B"), "A"), Scalar::from_int(10));
    }

    #[test]
    fn missing_flash_repay_rolls_back() {
        let mut w = base_world();
        let snapshot = w.clone();
        let b = bundle(
            "E",
            vec![Action::FlashBorrow {
                provider: addr("F"),
                borrower: addr("E"),
                asset: asset("A"),
                amount: amt(50),
            }],
        );
        let err = w.apply_bundle(&b).unwrap_err();
        assert!(matches!(err, BundleError::UnrepaidFlashDebt { .. }));
        assert_eq!(w, snapshot);
    }

    #[test]
    fn flash_swap_requires_fee_adjusted_repay() {
        let mut w = base_world();
        let mut p = w.pools["P1"].clone();
        p.fee_bps = 30;
        w.pools.insert("P1".into(), p.clone());
        w.set_balance(&addr("E"), &asset("B"), amt(100));
        let borrow = Action::FlashSwapBorrow {
            pool: "P1".into(),
            borrower: addr("E"),
            asset: asset("A"),
            amount: amt(10),
        };
        // Exact inverse without fee is short.
        let short = bundle(
            "E",
            vec![
                borrow.clone(),
                Action::FlashSwapRepay {
                    pool: "P1".into(),
                    borrower: addr("E"),
                    asset: asset("B"),
                    amount: Amount::new(Scalar::from_ratio(1000, 90)).unwrap(),
                },
            ],
        );
        assert!(matches!(
            execute_bundle(&w, &short),
            Err(BundleError::FlashSwapInvariantViolation { .. })
        ));
        let need = amm::solve_input_for_output(&p, &asset("A"), &amt(10)).unwrap();
        let ok = bundle(
            "E",
            vec![
                borrow,
                Action::FlashSwapRepay {
                    pool: "P1".into(),
                    borrower: addr("E"),
                    asset: asset("B"),
                    amount: need,
                },
            ],
        );
        let (after, _) = execute_bundle(&w, &ok).unwrap();
        assert!(after.pools["P1"].k() > p.k());
    }

    fn order(receiver: &str) -> LimitOrderIntent {
        LimitOrderIntent {
            order_id: "o1".into(),
            maker: addr("P"),
            maker_asset: asset("U"),
            taker_asset: asset("D"),
            making_amount: amt(100),
            taking_amount: amt(99),
            receiver: addr(receiver),
            settlement: addr("S"),
        }
    }

    fn order_world() -> WorldState {
        let mut w = WorldState::new(NumericMode::Exact);
        w.label(&addr("S"), Role::SettlementContract);
        w.set_balance(&addr("P"), &asset("U"), amt(100));
        w.set_balance(&addr("E"), &asset("D"), amt(99));
        w.approve(&addr("P"), &addr("S"), &asset("U"), amt(100));
        w
    }

    #[test]
    fn fill_with_receiver_equal_to_maker() {
        let w = order_world();
        let (after, events) = fill_limit_order(&w, &order("P"), &addr("E"), &amt(100)).unwrap();
        assert_eq!(after.holdings(&addr("P"), "U"), Amount::zero());
        assert_eq!(after.holdings(&addr("P"), "D"), amt(99));
        assert_eq!(after.holdings(&addr("E"), "U"), amt(100));
        assert_eq!(events.len(), 3);
    }

    #[test]
    fn fill_with_decoupled_receiver_has_no_maker_to_receiver_edge() {
        let w = order_world();
        let (after, events) = fill_limit_order(&w, &order("B"), &addr("E"), &amt(100)).unwrap();
        assert_eq!(after.holdings(&addr("B"), "D"), amt(99));
        assert_eq!(after.holdings(&addr("P"), "U"), Amount::zero());
        assert!(events.iter().all(|e| !(e.from == addr("P") && e.to == addr("B"))));
    }

    #[test]
    fn overfill_and_missing_allowance() {
        let w = order_world();
        assert!(matches!(
            fill_limit_order(&w, &order("B"), &addr("E"), &amt(101)),
            Err(BundleError::Overfill { .. })
        ));
        let mut w2 = order_world();
        w2.approve(&addr("P"), &addr("S"), &asset("U"), amt(50));
        assert!(matches!(
            fill_limit_order(&w2, &order("B"), &addr("E"), &amt(100)),
            Err(BundleError::InsufficientAllowance { .. })
        ));
    }

    #[test]
    fn partial_fills_are_pro_rata_and_cumulative() {
        let w = order_world();
        let (w, _) = fill_limit_order(&w, &order("B"), &addr("E"), &amt(40)).unwrap();
        assert_eq!(w.holdings(&addr("B"), "D"), Amount::new(Scalar::from_ratio(396, 10)).unwrap());
        assert!(matches!(
            fill_limit_order(&w, &order("B"), &addr("E"), &amt(61)),
            Err(BundleError::Overfill { .. })
        ));
        assert!(fill_limit_order(&w, &order("B"), &addr("E"), &amt(60)).is_ok());
    }

    #[test]
    fn trace_json_is_stable() {
        let w = base_world();
        let b = bundle(
            "P",
            vec![Action::Transfer {
                from: addr("P"),
                to: addr("B"),
                asset: asset("A"),
                amount: amt(10),
            }],
        );
        let (_, trace) = execute_bundle(&w, &b).unwrap();
        let json = trace.to_json();
        let ev = json.find("\"events\"").unwrap();
        let body = &json[ev..];
        let keys = ["\"seq\"", "\"from\"", "\"to\"", "\"asset\"", "\"amount\"", "\"action_index\"", "\"bundle_id\""];
        let pos: Vec<usize> = keys.iter().map(|k| body.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{pos:?}");
        assert_eq!(ExecutionTrace::from_json(&json).unwrap(), trace);
    }

    fn arb_action() -> impl Strategy<Value = Action> {
        let who = prop::sample::select(vec!["P", "B", "E", "F", "X"]);
        let sym = prop::sample::select(vec!["A", "B"]);
        prop_oneof![
            (who.clone(), who.clone(), sym.clone(), 1i64..40).prop_map(|(f, t, s, v)| Action::Transfer {
                from: addr(f),
                to: addr(t),
                asset: asset(s),
                amount: amt(v),
            }),
            (who.clone(), sym.clone(), 1i64..40).prop_map(|(c, s, v)| Action::Swap {
                caller: addr(c),
                pool: "P1".into(),
                input_asset: asset(s),
                amount_in: amt(v),
                recipient: addr(c),
            }),
            (who.clone(), 1i64..60).prop_map(|(b, v)| Action::FlashBorrow {
                provider: addr("F"),
                borrower: addr(b),
                asset: asset("A"),
                amount: amt(v),
            }),
            (who.clone(), 1i64..60).prop_map(|(b, v)| Action::FlashRepay {
                borrower: addr(b),
                provider: addr("F"),
                asset: asset("A"),
                amount: amt(v),
            }),
            (who.clone(), who, 1i64..20).prop_map(|(o, s, v)| Action::TransferFrom {
                owner: addr(o),
                spender: addr(s),
                to: addr(s),
                asset: asset("A"),
                amount: amt(v),
            }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn atomicity_conservation_and_trace_agreement(actions in prop::collection::vec(arb_action(), 1..8)) {
            let mut w = base_world();
            w.set_balance(&addr("E"), &asset("B"), amt(50));
            w.set_balance(&addr("X"), &asset("A"), amt(5));
            w.approve(&addr("P"), &addr("E"), &asset("A"), amt(8));
            let snapshot = w.clone();
            let b = bundle("E", actions);
            match w.apply_bundle(&b) {
                Err(_) => prop_assert_eq!(&w, &snapshot),
                Ok(trace) => {
                    let d = net_deltas(&trace);
                    for sym in ["A", "B"] {
                        let total: Scalar = d.iter().filter(|((_, s), _)| s == sym).map(|(_, v)| v.clone()).sum();
                        prop_assert!(total.is_zero());
                        prop_assert_eq!(w.total_supply(sym), snapshot.total_supply(sym));
                    }
                    let mut addrs: Vec<Address> = w.labels.keys().cloned().collect();
                    addrs.extend(snapshot.labels.keys().cloned());
                    for a in addrs {
                        for sym in ["A", "B"] {
                            let before = snapshot.holdings(&a, sym).into_inner();
                            let after = w.holdings(&a, sym).into_inner();
                            prop_assert_eq!(before + delta_of(&d, &a, sym), after);
                        }
                    }
                    for pair in trace.events.windows(2) {
                        prop_assert!(pair[0].seq < pair[1].seq);
                    }
                }
            }
        }
    }
}
