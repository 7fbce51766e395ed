//! Recursive-descent parser. One pass, no backtracking; the grammar only
//! needs one word of lookahead plus a colon peek to spot clause headers.

use super::ast::*;
use super::lexer::{lex, Tok, Token};
use super::ParseError;
use crate::diag::Pos;

/// Parses a source file into its class definitions. Every `class:` header
/// starts a new definition; at least one is required.
pub fn parse(source: &str) -> Result<Vec<ClassDef>, ParseError> {
    let toks = lex(source)?;
    let mut p = Parser { toks, i: 0 };
    let mut classes = Vec::new();
    while !p.at_end() {
        classes.push(p.class_def()?);
    }
    if classes.is_empty() {
        return Err(ParseError {
            pos: Pos::new(1, 1),
            message: "expected 'class:' at start of file".into(),
        });
    }
    Ok(classes)
}

struct Parser {
    toks: Vec<Token>,
    i: usize,
}

impl Parser {
    fn at_end(&self) -> bool {
        self.i >= self.toks.len()
    }

    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.i)
    }

    fn last_pos(&self) -> Pos {
        self.toks
            .last()
            .map(|t| t.pos)
            .unwrap_or_else(|| Pos::new(1, 1))
    }

    fn here(&self) -> Pos {
        self.peek().map(|t| t.pos).unwrap_or_else(|| self.last_pos())
    }

    /// True iff the upcoming tokens are `word ':'`, i.e. a clause header.
    fn at_header(&self, word: &str) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Word(w), .. }) if w == word)
            && matches!(self.toks.get(self.i + 1), Some(Token { tok: Tok::Colon, .. }))
    }

    fn at_word(&self, word: &str) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Word(w), .. }) if w == word)
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.i].clone();
        self.i += 1;
        t
    }

    fn expect_tok(&mut self, tok: Tok, what: &str) -> Result<Pos, ParseError> {
        match self.peek() {
            Some(t) if t.tok == tok => Ok(self.bump().pos),
            Some(t) => Err(ParseError {
                pos: t.pos,
                message: format!("expected {what}, found {}", t.tok.describe()),
            }),
            None => Err(ParseError {
                pos: self.last_pos(),
                message: format!("expected {what}, found end of file"),
            }),
        }
    }

    fn expect_name(&mut self, what: &str) -> Result<(String, Pos), ParseError> {
        match self.peek() {
            Some(Token {
                tok: Tok::Word(w),
                pos,
            }) => {
                let out = (w.clone(), *pos);
                self.bump();
                Ok(out)
            }
            Some(t) => Err(ParseError {
                pos: t.pos,
                message: format!("expected {what}, found {}", t.tok.describe()),
            }),
            None => Err(ParseError {
                pos: self.last_pos(),
                message: format!("expected {what}, found end of file"),
            }),
        }
    }

    fn header(&mut self, word: &str) -> Result<Pos, ParseError> {
        if !self.at_word(word) {
            let found = self
                .peek()
                .map(|t| t.tok.describe())
                .unwrap_or_else(|| "end of file".into());
            return Err(ParseError {
                pos: self.here(),
                message: format!("expected '{word}:', found {found}"),
            });
        }
        let pos = self.bump().pos;
        self.expect_tok(Tok::Colon, &format!("':' after '{word}'"))?;
        Ok(pos)
    }

    fn class_def(&mut self) -> Result<ClassDef, ParseError> {
        let pos = self.header("class")?;
        let (name, _) = self.expect_name("class name")?;
        let mut states = Vec::new();
        while self.at_header("state") {
            states.push(self.state_clause()?);
        }
        if states.is_empty() {
            return Err(ParseError {
                pos,
                message: format!("class '{name}' declares no states"),
            });
        }
        if !self.at_end() && !self.at_header("class") {
            let t = self.peek().unwrap();
            return Err(ParseError {
                pos: t.pos,
                message: match &t.tok {
                    Tok::Word(w) => format!("unknown keyword '{w}', expected 'state:' or 'class:'"),
                    other => format!("expected 'state:' or 'class:', found {}", other.describe()),
                },
            });
        }
        Ok(ClassDef { name, pos, states })
    }

    fn state_clause(&mut self) -> Result<StateClause, ParseError> {
        let pos = self.header("state")?;
        let (name, _) = self.expect_name("state name")?;
        let mut whens = Vec::new();
        let mut actions = Vec::new();
        loop {
            if self.at_word("when") {
                whens.push(self.when_clause()?);
            } else if self.at_header("action") {
                actions.push(self.action_clause()?);
            } else if self.at_end() || self.at_header("state") || self.at_header("class") {
                break;
            } else {
                let t = self.peek().unwrap();
                return Err(ParseError {
                    pos: t.pos,
                    message: match &t.tok {
                        Tok::Word(w) => format!(
                            "unknown keyword '{w}', expected 'when', 'action:', 'state:' or 'class:'"
                        ),
                        other => format!(
                            "expected 'when', 'action:', 'state:' or 'class:', found {}",
                            other.describe()
                        ),
                    },
                });
            }
        }
        Ok(StateClause {
            name,
            pos,
            whens,
            actions,
        })
    }

    fn when_clause(&mut self) -> Result<WhenClause, ParseError> {
        let pos = self.bump().pos; // 'when'
        let guard = self.guard()?;
        let referer = if self.at_word("move_to") {
            let kw = self.bump().pos;
            match self.peek() {
                Some(Token {
                    tok: Tok::Word(w),
                    pos,
                }) => {
                    let r = Referer::MoveTo {
                        target: w.clone(),
                        pos: *pos,
                    };
                    self.bump();
                    r
                }
                _ => {
                    return Err(ParseError {
                        pos: kw,
                        message: "missing state after move_to".into(),
                    })
                }
            }
        } else if self.at_word("do") {
            let kw = self.bump().pos;
            match self.peek() {
                Some(Token {
                    tok: Tok::Word(w),
                    pos,
                }) => {
                    let r = Referer::DoAction {
                        action: w.clone(),
                        pos: *pos,
                    };
                    self.bump();
                    r
                }
                _ => {
                    return Err(ParseError {
                        pos: kw,
                        message: "missing action name after do".into(),
                    })
                }
            }
        } else {
            return Err(ParseError {
                pos: self.here(),
                message: "expected 'move_to' or 'do' after when guard".into(),
            });
        };
        Ok(WhenClause { pos, guard, referer })
    }

    fn guard(&mut self) -> Result<Guard, ParseError> {
        let mut left = self.guard_and()?;
        while self.at_word("or") {
            self.bump();
            let right = self.guard_and()?;
            left = Guard::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn guard_and(&mut self) -> Result<Guard, ParseError> {
        let mut left = self.guard_primary()?;
        while self.at_word("and") {
            self.bump();
            let right = self.guard_primary()?;
            left = Guard::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn guard_primary(&mut self) -> Result<Guard, ParseError> {
        if matches!(self.peek(), Some(Token { tok: Tok::LParen, .. })) {
            self.bump();
            let g = self.guard()?;
            self.expect_tok(Tok::RParen, "')'")?;
            Ok(g)
        } else {
            self.guard_atom()
        }
    }

    fn guard_atom(&mut self) -> Result<Guard, ParseError> {
        let (pattern, pos) = self.child_pattern()?;
        if !self.at_word("in_state") {
            return Err(ParseError {
                pos: self.here(),
                message: "expected 'in_state' after child pattern".into(),
            });
        }
        self.bump();
        let states = self.state_set()?;
        Ok(Guard::Atom {
            pattern,
            states,
            pos,
        })
    }

    fn child_pattern(&mut self) -> Result<(ChildPattern, Pos), ParseError> {
        let (word, pos) = match self.peek() {
            Some(Token {
                tok: Tok::Word(w),
                pos,
            }) => (w.clone(), *pos),
            _ => {
                return Err(ParseError {
                    pos: self.here(),
                    message: "expected child pattern ($ANY$... or $ALL$...)".into(),
                })
            }
        };
        let (quant, rest) = if let Some(rest) = word.strip_prefix("$ANY$") {
            (Quant::Any, rest)
        } else if let Some(rest) = word.strip_prefix("$ALL$") {
            (Quant::All, rest)
        } else {
            return Err(ParseError {
                pos,
                message: format!("expected child pattern ($ANY$... or $ALL$...), found '{word}'"),
            });
        };
        if rest.is_empty() {
            return Err(ParseError {
                pos,
                message: "child pattern is missing a selector".into(),
            });
        }
        self.bump();
        let selector = if rest == "FwCHILDREN" {
            Selector::FwChildren
        } else {
            Selector::Class(rest.to_string())
        };
        Ok((ChildPattern { quant, selector }, pos))
    }

    fn state_set(&mut self) -> Result<Vec<String>, ParseError> {
        if matches!(self.peek(), Some(Token { tok: Tok::LBrace, .. })) {
            let open = self.bump().pos;
            let mut states = Vec::new();
            loop {
                match self.peek() {
                    Some(Token { tok: Tok::Word(w), .. }) => {
                        states.push(w.clone());
                        self.bump();
                    }
                    Some(Token { tok: Tok::RBrace, .. }) if states.is_empty() => {
                        return Err(ParseError {
                            pos: open,
                            message: "empty state set".into(),
                        })
                    }
                    _ => {
                        return Err(ParseError {
                            pos: self.here(),
                            message: "expected state name in state set".into(),
                        })
                    }
                }
                match self.peek() {
                    Some(Token { tok: Tok::Comma, .. }) => {
                        self.bump();
                    }
                    Some(Token { tok: Tok::RBrace, .. }) => {
                        self.bump();
                        break;
                    }
                    _ => {
                        return Err(ParseError {
                            pos: self.here(),
                            message: "expected ',' or '}' in state set".into(),
                        })
                    }
                }
            }
            Ok(states)
        } else {
            let (state, _) = self.expect_name("state name after 'in_state'")?;
            Ok(vec![state])
        }
    }

    fn action_clause(&mut self) -> Result<ActionClause, ParseError> {
        let pos = self.header("action")?;
        let (name, _) = self.expect_name("action name")?;
        let body = self.statements(false)?;
        if body.is_empty() {
            return Err(ParseError {
                pos,
                message: format!("action '{name}' has an empty body"),
            });
        }
        Ok(ActionClause { name, pos, body })
    }

    /// Parses statements until a boundary. Inside an if branch the boundary
    /// is `else`/`endif`; at the top of an action body those are errors.
    fn statements(&mut self, in_if: bool) -> Result<Vec<Statement>, ParseError> {
        let mut out = Vec::new();
        loop {
            if self.at_end()
                || self.at_word("when")
                || self.at_header("action")
                || self.at_header("state")
                || self.at_header("class")
            {
                if in_if {
                    return Err(ParseError {
                        pos: self.here(),
                        message: "unbalanced if: missing 'endif'".into(),
                    });
                }
                return Ok(out);
            }
            if self.at_word("else") || self.at_word("endif") {
                if in_if {
                    return Ok(out);
                }
                let t = self.bump();
                let Tok::Word(w) = &t.tok else { unreachable!() };
                return Err(ParseError {
                    pos: t.pos,
                    message: format!("unbalanced if: '{w}' without matching 'if'"),
                });
            }
            out.push(self.statement()?);
        }
    }

    fn statement(&mut self) -> Result<Statement, ParseError> {
        if self.at_word("do") {
            let pos = self.bump().pos;
            let (command, _) = self.expect_name("command name after 'do'")?;
            let (pattern, ppos) = self.child_pattern()?;
            if pattern.quant != Quant::All {
                return Err(ParseError {
                    pos: ppos,
                    message: "do statements require an $ALL$ child pattern".into(),
                });
            }
            Ok(Statement::Do {
                command,
                pattern,
                pos,
            })
        } else if self.at_word("move_to") {
            let pos = self.bump().pos;
            match self.peek() {
                Some(Token {
                    tok: Tok::Word(w), ..
                }) => {
                    let target = w.clone();
                    self.bump();
                    Ok(Statement::MoveTo { target, pos })
                }
                _ => Err(ParseError {
                    pos,
                    message: "missing state after move_to".into(),
                }),
            }
        } else if self.at_word("if") {
            let pos = self.bump().pos;
            let guard = self.guard()?;
            if !self.at_word("then") {
                return Err(ParseError {
                    pos: self.here(),
                    message: "expected 'then' after if guard".into(),
                });
            }
            self.bump();
            let then_branch = self.statements(true)?;
            let else_branch = if self.at_word("else") {
                self.bump();
                self.statements(true)?
            } else {
                Vec::new()
            };
            if !self.at_word("endif") {
                return Err(ParseError {
                    pos,
                    message: "unbalanced if: missing 'endif'".into(),
                });
            }
            self.bump();
            Ok(Statement::If {
                guard,
                then_branch,
                else_branch,
                pos,
            })
        } else {
            let t = self.peek().unwrap();
            Err(ParseError {
                pos: t.pos,
                message: match &t.tok {
                    Tok::Word(w) => {
                        format!("unknown keyword '{w}', expected 'do', 'move_to' or 'if'")
                    }
                    other => format!("expected a statement, found {}", other.describe()),
                },
            })
        }
    }
}
