//! Reference model of one customer's sessions, kept deliberately naive:
//! booleans for the two flags, integer seconds for time, and the audit
//! events each transition must leave behind. It shares no code with the
//! engine so the model check compares two independent readings of the same
//! state table.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Event {
    LoginOk,
    LoginFail,
    InitiateA1,
    InitiateA2,
    StepUpOk,
    StepUpFail,
    Logout,
    /// Advance past the session lifetime, then sweep.
    Timeout,
}

pub const EVENTS: [Event; 8] = [
    Event::LoginOk,
    Event::LoginFail,
    Event::InitiateA1,
    Event::InitiateA2,
    Event::StepUpOk,
    Event::StepUpFail,
    Event::Logout,
    Event::Timeout,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    SingleTransaction,
    Session,
}

#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub session_ttl: i64,
    pub challenge_ttl: i64,
    pub max_a1_failures: u32,
    pub max_a2_failures: u32,
    pub scope: Scope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    UserLocked,
    NotAuthenticated,
    SessionExpired,
    UnknownSession,
    ChallengePending,
    ChallengeMismatch,
    ChallengeConsumed,
    ChallengeExpired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Granted,
    Denied { locked: bool, remaining: u32 },
    Executed { a2: bool },
    Challenge,
    StepUpExecuted { sensitive_after: bool },
    StepUpDenied { remaining: u32, refused: bool },
    LoggedOut,
    Swept(usize),
    Rejected(Rejection),
}

impl Outcome {
    /// Number of transaction records the outcome implies.
    pub fn transactions(self) -> usize {
        match self {
            Outcome::Executed { .. } | Outcome::StepUpExecuted { .. } => 1,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Challenge {
    issued_at: i64,
    consumed: bool,
    failures: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSession {
    pub live: bool,
    pub a1: bool,
    pub a2: bool,
    opened_at: i64,
    challenge: Option<Challenge>,
}

#[derive(Debug, Clone)]
pub struct Step {
    pub outcome: Outcome,
    /// Audit events in commit order, by their stored names.
    pub audit: Vec<&'static str>,
}

#[derive(Debug, Clone)]
pub struct Model {
    limits: Limits,
    /// Seconds since the start of the run.
    pub now: i64,
    locked: bool,
    a1_failures: u32,
    /// In login order; events act on the last one.
    pub sessions: Vec<ModelSession>,
}

impl Model {
    pub fn new(limits: Limits) -> Self {
        Self {
            limits,
            now: 0,
            locked: false,
            a1_failures: 0,
            sessions: Vec::new(),
        }
    }

    pub fn current(&self) -> Option<&ModelSession> {
        self.sessions.last()
    }

    pub fn apply(&mut self, event: Event) -> Step {
        if event == Event::Timeout {
            self.now += self.limits.session_ttl + 1;
        } else {
            self.now += 1;
        }
        let mut audit = Vec::new();
        let outcome = match event {
            Event::LoginOk | Event::LoginFail if self.locked => Outcome::Rejected(Rejection::UserLocked),
            Event::LoginOk => {
                self.a1_failures = 0;
                self.sessions.push(ModelSession {
                    live: true,
                    a1: true,
                    a2: false,
                    opened_at: self.now,
                    challenge: None,
                });
                audit.push("a1_granted");
                Outcome::Granted
            }
            Event::LoginFail => {
                let count = self.a1_failures + 1;
                let locked = count >= self.limits.max_a1_failures;
                audit.push("a1_denied");
                if locked {
                    audit.push("lockout");
                    self.locked = true;
                    self.a1_failures = 0;
                } else {
                    self.a1_failures = count;
                }
                Outcome::Denied {
                    locked,
                    remaining: self.limits.max_a1_failures - count,
                }
            }
            Event::InitiateA1 | Event::InitiateA2 => self.initiate(event == Event::InitiateA2, &mut audit),
            Event::StepUpOk | Event::StepUpFail => self.step_up(event == Event::StepUpOk, &mut audit),
            Event::Logout => match self.sessions.last_mut() {
                Some(s) if s.live => {
                    close(s);
                    audit.push("logout");
                    Outcome::LoggedOut
                }
                _ => Outcome::Rejected(Rejection::UnknownSession),
            },
            Event::Timeout => {
                let (now, ttl) = (self.now, self.limits.session_ttl);
                let mut swept = 0;
                for s in self.sessions.iter_mut().filter(|s| s.live && s.opened_at + ttl < now) {
                    close(s);
                    audit.push("timeout");
                    swept += 1;
                }
                Outcome::Swept(swept)
            }
        };
        Step { outcome, audit }
    }

    /// Shared guard of every in-session request: absent, closed, or lazily
    /// expired sessions are refused.
    fn live_session(&mut self, audit: &mut Vec<&'static str>) -> Result<usize, Rejection> {
        let (now, ttl) = (self.now, self.limits.session_ttl);
        let index = self.sessions.len().checked_sub(1).ok_or(Rejection::NotAuthenticated)?;
        let s = &mut self.sessions[index];
        if !s.live {
            return Err(Rejection::SessionExpired);
        }
        if now > s.opened_at + ttl {
            close(s);
            audit.push("timeout");
            return Err(Rejection::SessionExpired);
        }
        Ok(index)
    }

    fn initiate(&mut self, sensitive: bool, audit: &mut Vec<&'static str>) -> Outcome {
        let index = match self.live_session(audit) {
            Ok(index) => index,
            Err(rejection) => return Outcome::Rejected(rejection),
        };
        let (now, challenge_ttl) = (self.now, self.limits.challenge_ttl);
        let s = &mut self.sessions[index];
        if !sensitive || s.a2 {
            audit.push("tx_executed");
            return Outcome::Executed { a2: sensitive };
        }
        if let Some(c) = s.challenge {
            if !c.consumed && now <= c.issued_at + challenge_ttl {
                return Outcome::Rejected(Rejection::ChallengePending);
            }
        }
        s.challenge = Some(Challenge {
            issued_at: now,
            consumed: false,
            failures: 0,
        });
        Outcome::Challenge
    }

    fn step_up(&mut self, matching: bool, audit: &mut Vec<&'static str>) -> Outcome {
        let index = match self.live_session(audit) {
            Ok(index) => index,
            Err(rejection) => return Outcome::Rejected(rejection),
        };
        let limits = self.limits;
        let now = self.now;
        let s = &mut self.sessions[index];
        let Some(c) = s.challenge.as_mut() else {
            return Outcome::Rejected(Rejection::ChallengeMismatch);
        };
        if c.consumed {
            return Outcome::Rejected(Rejection::ChallengeConsumed);
        }
        if now > c.issued_at + limits.challenge_ttl {
            return Outcome::Rejected(Rejection::ChallengeExpired);
        }
        if matching {
            c.consumed = true;
            audit.push("a2_granted");
            audit.push("tx_executed");
            let sensitive_after = limits.scope == Scope::Session;
            s.a2 = sensitive_after;
            return Outcome::StepUpExecuted { sensitive_after };
        }
        c.failures += 1;
        let refused = c.failures >= limits.max_a2_failures;
        audit.push("a2_denied");
        if refused {
            audit.push("tx_refused");
            c.consumed = true;
        }
        Outcome::StepUpDenied {
            remaining: limits.max_a2_failures - c.failures,
            refused,
        }
    }
}

fn close(s: &mut ModelSession) {
    s.live = false;
    s.a1 = false;
    s.a2 = false;
    s.challenge = None;
}
