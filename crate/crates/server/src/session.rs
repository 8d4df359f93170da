//! Live session state machine. Pure: no clocks, no I/O. The actor in
//! [`crate::api`] feeds it events one at a time.

use equisel_core::agents::{RoundRecord, Session, SessionConfig, SessionLog};
use equisel_core::game::{SocialState, Strategy};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServerError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeatKind {
    Human,
    Bot,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Seat {
    Human(Option<String>),
    Bot,
}

impl Seat {
    fn is_open(&self) -> bool {
        matches!(self, Seat::Human(None))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    Lobby,
    RoundOpen { t: u32, received: Vec<bool> },
    RoundResolved { t: u32 },
    Finished,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Lobby => "lobby",
            Phase::RoundOpen { .. } => "round_open",
            Phase::RoundResolved { .. } => "round_resolved",
            Phase::Finished => "finished",
        }
    }
}

/// What one seat sees after a round.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Feedback {
    pub strategy: Strategy,
    pub counts: SocialState,
    pub game_earn: f64,
    pub reward: f64,
    pub tax: f64,
    pub round_sum: f64,
    pub cumulative: f64,
    pub timed_out: bool,
}

impl Feedback {
    pub fn for_seat(rec: &RoundRecord, seat: usize) -> Self {
        Feedback {
            strategy: rec.choices[seat],
            counts: rec.counts,
            game_earn: rec.game_payoffs[seat],
            reward: rec.rewards[seat],
            tax: rec.taxes[seat],
            round_sum: rec.totals[seat],
            cumulative: rec.cumulative[seat],
            timed_out: rec.timed_out.contains(&seat),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankEntry {
    pub seat: usize,
    pub cumulative: f64,
    /// 1 is best; tied seats share the average of their positions.
    pub rank: f64,
}

/// Orders seats by cumulative score, highest first.
pub fn ranking(cumulative: &[f64]) -> Vec<RankEntry> {
    let mut order: Vec<usize> = (0..cumulative.len()).collect();
    order.sort_by(|&a, &b| cumulative[b].total_cmp(&cumulative[a]).then(a.cmp(&b)));
    let mut out = Vec::with_capacity(order.len());
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && cumulative[order[j + 1]] == cumulative[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        out.extend(order[i..=j].iter().map(|&seat| RankEntry {
            seat,
            cumulative: cumulative[seat],
            rank,
        }));
        i = j + 1;
    }
    out
}

/// Snapshot returned to clients.
#[derive(Clone, Debug, Serialize)]
pub struct StateView {
    pub session_id: String,
    #[serde(flatten)]
    pub phase: Phase,
    pub rounds: u32,
    pub seats: Vec<SeatKind>,
    pub open_seats: usize,
    pub seat: Option<usize>,
    pub choice_enabled: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last: Option<Feedback>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranking: Option<Vec<RankEntry>>,
}

pub struct LiveSession {
    id: String,
    phase: Phase,
    seats: Vec<Seat>,
    pending: Vec<Option<Strategy>>,
    engine: Session,
}

impl LiveSession {
    pub fn new(id: String, config: SessionConfig, plan: &[SeatKind]) -> Result<Self> {
        let players = config.players as usize;
        if plan.len() != players {
            return Err(ServerError::SeatPlan {
                got: plan.len(),
                want: players,
            });
        }
        let seats = plan
            .iter()
            .map(|k| match k {
                SeatKind::Human => Seat::Human(None),
                SeatKind::Bot => Seat::Bot,
            })
            .collect();
        Ok(LiveSession {
            id,
            phase: Phase::Lobby,
            seats,
            pending: vec![None; players],
            engine: Session::new(config)?,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn config(&self) -> &SessionConfig {
        self.engine.config()
    }

    pub fn records(&self) -> &[RoundRecord] {
        self.engine.records()
    }

    pub fn seat_of(&self, token: &str) -> Option<usize> {
        self.seats
            .iter()
            .position(|s| matches!(s, Seat::Human(Some(t)) if t == token))
    }

    pub fn open_seats(&self) -> usize {
        self.seats.iter().filter(|s| s.is_open()).count()
    }

    /// Binds `token` to the first free human seat; opens round 1 once
    /// every human seat is taken.
    pub fn join(&mut self, token: &str) -> Result<usize> {
        if self.phase != Phase::Lobby {
            return Err(ServerError::SessionInProgress);
        }
        if self.seat_of(token).is_some() {
            return Err(ServerError::DuplicateToken(token.to_owned()));
        }
        let seat = self
            .seats
            .iter()
            .position(Seat::is_open)
            .ok_or(ServerError::SessionFull)?;
        self.seats[seat] = Seat::Human(Some(token.to_owned()));
        self.try_start()?;
        Ok(seat)
    }

    /// Turns the remaining free seats into bots and starts. Lobby only.
    pub fn fill_with_bots(&mut self) -> Result<()> {
        if self.phase != Phase::Lobby {
            return Err(ServerError::SessionInProgress);
        }
        for s in self.seats.iter_mut().filter(|s| s.is_open()) {
            *s = Seat::Bot;
        }
        self.try_start()
    }

    /// Opens round 1 if no human seat is free.
    pub fn try_start(&mut self) -> Result<()> {
        if self.phase == Phase::Lobby && self.open_seats() == 0 {
            self.open_round(1)?;
        }
        Ok(())
    }

    /// Bots commit their choice as soon as the round opens, in seat order.
    fn open_round(&mut self, t: u32) -> Result<()> {
        let mut received = vec![false; self.seats.len()];
        for seat in 0..self.seats.len() {
            self.pending[seat] = None;
            if self.seats[seat] == Seat::Bot {
                self.pending[seat] = Some(self.engine.draw_choice(seat)?);
                received[seat] = true;
            }
        }
        self.phase = Phase::RoundOpen { t, received };
        Ok(())
    }

    /// Records a human choice. Returns true once every seat has chosen.
    pub fn submit(&mut self, token: &str, label: i64) -> Result<bool> {
        let seat = self
            .seat_of(token)
            .ok_or_else(|| ServerError::UnknownToken(token.to_owned()))?;
        let Phase::RoundOpen { received, .. } = &mut self.phase else {
            return Err(ServerError::WrongPhase(self.phase.name().into()));
        };
        let strategy = Strategy::from_label(label).map_err(|_| ServerError::InvalidStrategy(label))?;
        if received[seat] {
            return Err(ServerError::DoubleSubmission);
        }
        received[seat] = true;
        self.pending[seat] = Some(strategy);
        Ok(received.iter().all(|&r| r))
    }

    pub fn all_received(&self) -> bool {
        matches!(&self.phase, Phase::RoundOpen { received, .. } if received.iter().all(|&r| r))
    }

    /// Resolves the open round once all choices are in.
    pub fn resolve(&mut self) -> Result<&RoundRecord> {
        if !self.all_received() {
            return Err(ServerError::WrongPhase(self.phase.name().into()));
        }
        self.finish_round(Vec::new())
    }

    /// Fills missing choices by the timeout policy and resolves.
    pub fn timeout(&mut self) -> Result<&RoundRecord> {
        if !matches!(self.phase, Phase::RoundOpen { .. }) {
            return Err(ServerError::WrongPhase(self.phase.name().into()));
        }
        let mut missing = Vec::new();
        for seat in 0..self.seats.len() {
            if self.pending[seat].is_none() {
                self.pending[seat] = Some(self.engine.fallback_choice(seat));
                missing.push(seat);
            }
        }
        self.finish_round(missing)
    }

    fn finish_round(&mut self, timed_out: Vec<usize>) -> Result<&RoundRecord> {
        let Phase::RoundOpen { t, .. } = self.phase else {
            unreachable!("checked by callers");
        };
        let choices = self.pending.iter_mut().map(|c| c.take().expect("filled")).collect();
        self.engine.resolve_flagged(choices, timed_out)?;
        self.phase = Phase::RoundResolved { t };
        Ok(self.engine.records().last().expect("just resolved"))
    }

    /// Leaves `RoundResolved`: opens the next round or finishes.
    pub fn advance(&mut self) -> Result<&Phase> {
        let Phase::RoundResolved { t } = self.phase else {
            return Err(ServerError::WrongPhase(self.phase.name().into()));
        };
        if self.engine.is_finished() {
            self.phase = Phase::Finished;
        } else {
            self.open_round(t + 1)?;
        }
        Ok(&self.phase)
    }

    pub fn ranking(&self) -> Option<Vec<RankEntry>> {
        self.records().last().map(|r| ranking(&r.cumulative))
    }

    pub fn view(&self, token: Option<&str>) -> StateView {
        let seat = token.and_then(|t| self.seat_of(t));
        let choice_enabled = match (&self.phase, seat) {
            (Phase::RoundOpen { received, .. }, Some(s)) => !received[s],
            _ => false,
        };
        StateView {
            session_id: self.id.clone(),
            phase: self.phase.clone(),
            rounds: self.config().rounds,
            seats: self
                .seats
                .iter()
                .map(|s| match s {
                    Seat::Human(_) => SeatKind::Human,
                    Seat::Bot => SeatKind::Bot,
                })
                .collect(),
            open_seats: self.open_seats(),
            seat,
            choice_enabled,
            last: seat.and_then(|s| self.records().last().map(|r| Feedback::for_seat(r, s))),
            ranking: (self.phase == Phase::Finished).then(|| self.ranking()).flatten(),
        }
    }

    /// Log of the session; before the end only with `partial`.
    pub fn export(&self, partial: bool) -> Result<SessionLog> {
        if self.phase != Phase::Finished && !partial {
            return Err(ServerError::NotFinished);
        }
        Ok(self.engine.log(self.id.clone(), self.phase != Phase::Finished))
    }
}
