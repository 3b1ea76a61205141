//! Expression syntax: `Q<digits>` variables, `NOT` > `AND` > `OR`, parentheses.
//! Keywords are case-insensitive; binary operators associate to the left.

use super::{Expr, ExprTree, QuestionId};

/// Parse failure. `position` is a 1-based character column; end of input is
/// reported as one past the last character.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
}

impl ParseError {
    pub fn position(&self) -> Option<usize> {
        match self {
            ParseError::Empty => None,
            ParseError::Syntax { position, .. } => Some(*position),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Var(QuestionId),
    And,
    Or,
    Not,
    LParen,
    RParen,
}

struct Token {
    tok: Tok,
    pos: usize,
}

fn syntax(position: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        position,
        message: message.into(),
    }
}

fn tokenize(text: &str) -> Result<(Vec<Token>, usize), ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        match c {
            '(' => {
                tokens.push(Token {
                    tok: Tok::LParen,
                    pos,
                });
                i += 1;
            }
            ')' => {
                tokens.push(Token {
                    tok: Tok::RParen,
                    pos,
                });
                i += 1;
            }
            c if c.is_alphanumeric() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let tok = match word.to_ascii_uppercase().as_str() {
                    "AND" => Tok::And,
                    "OR" => Tok::Or,
                    "NOT" => Tok::Not,
                    _ => Tok::Var(
                        word.parse()
                            .map_err(|_| syntax(pos, format!("unknown identifier {word:?}")))?,
                    ),
                };
                tokens.push(Token { tok, pos });
            }
            other => return Err(syntax(pos, format!("unexpected character {other:?}"))),
        }
    }
    Ok((tokens, chars.len() + 1))
}

struct Parser {
    tokens: Vec<Token>,
    next: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.next).map(|t| &t.tok)
    }

    fn pos(&self) -> usize {
        self.tokens.get(self.next).map_or(self.end, |t| t.pos)
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![self.and_expr()?];
        while self.peek() == Some(&Tok::Or) {
            self.next += 1;
            terms.push(self.and_expr()?);
        }
        Ok(Expr::or(terms))
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![self.not_expr()?];
        while self.peek() == Some(&Tok::And) {
            self.next += 1;
            terms.push(self.not_expr()?);
        }
        Ok(Expr::and(terms))
    }

    fn not_expr(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Tok::Not) {
            self.next += 1;
            return Ok(Expr::not(self.not_expr()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.peek().cloned() {
            Some(Tok::Var(q)) => {
                self.next += 1;
                Ok(Expr::Var(q))
            }
            Some(Tok::LParen) => {
                self.next += 1;
                let inner = self.or_expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(syntax(self.pos(), "expected ')'"));
                }
                self.next += 1;
                Ok(inner)
            }
            Some(tok) => Err(syntax(
                pos,
                format!("expected question id or '(', found {}", describe(&tok)),
            )),
            None => Err(syntax(pos, "unexpected end of expression")),
        }
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Var(q) => q.to_string(),
        Tok::And => "AND".into(),
        Tok::Or => "OR".into(),
        Tok::Not => "NOT".into(),
        Tok::LParen => "'('".into(),
        Tok::RParen => "')'".into(),
    }
}

/// Parses an expression string into a canonical tree.
pub fn parse_tree(text: &str) -> Result<ExprTree, ParseError> {
    let (tokens, end) = tokenize(text)?;
    if tokens.is_empty() {
        return Err(ParseError::Empty);
    }
    let mut parser = Parser {
        tokens,
        next: 0,
        end,
    };
    let root = parser.or_expr()?;
    if let Some(tok) = parser.peek() {
        return Err(syntax(
            parser.pos(),
            format!("unexpected {}", describe(tok)),
        ));
    }
    Ok(ExprTree::new(root).expect("parser output is canonical"))
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Prec {
    Or,
    And,
    Not,
}

fn write_expr(expr: &Expr, parent: Prec, out: &mut String) {
    let own = match expr {
        Expr::Var(_) => Prec::Not,
        Expr::Not(_) => Prec::Not,
        Expr::And(_) => Prec::And,
        Expr::Or(_) => Prec::Or,
    };
    let wrap = own < parent;
    if wrap {
        out.push('(');
    }
    match expr {
        Expr::Var(q) => out.push_str(&q.to_string()),
        Expr::Not(c) => {
            out.push_str("NOT ");
            write_expr(c, Prec::Not, out);
        }
        Expr::And(cs) | Expr::Or(cs) => {
            let sep = if own == Prec::And { " AND " } else { " OR " };
            for (i, c) in cs.iter().enumerate() {
                if i > 0 {
                    out.push_str(sep);
                }
                // same-operator children cannot occur in canonical trees, so a
                // child at equal precedence never needs parentheses
                write_expr(c, own, out);
            }
        }
    }
    if wrap {
        out.push(')');
    }
}

/// Canonical text: uppercase keywords, single spaces, minimal parentheses.
pub fn serialize_tree(tree: &ExprTree) -> String {
    let mut out = String::new();
    write_expr(tree.root(), Prec::Or, &mut out);
    out
}
