//! Line-oriented DSL:
//!
//! ```text
//! # comment
//! input <name> = <float>
//! <name> = <prim>(<name>{, <name>})
//! objective <name>
//! ```

use std::collections::{BTreeMap, HashMap};

use super::{
    is_identifier, validate_network, FuncNode, FunctionNetwork, NetError, Primitive, VarId,
};

enum Stmt<'a> {
    Input {
        name: &'a str,
        value: f64,
    },
    Func {
        output: &'a str,
        op: Primitive,
        args: Vec<&'a str>,
    },
    Objective(&'a str),
}

struct Line<'a> {
    text: &'a str,
    line: usize,
    pos: usize,
}

impl<'a> Line<'a> {
    fn err(&self, message: impl Into<String>) -> NetError {
        NetError::Syntax {
            line: self.line,
            column: self.pos + 1,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.text[self.pos..].starts_with([' ', '\t', '\r']) {
            self.pos += 1;
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.text.len()
    }

    /// Reads a run of characters that may form an identifier or a primitive
    /// name (which can embed a signed decimal constant).
    fn word(&mut self) -> &'a str {
        self.skip_ws();
        let rest = &self.text[self.pos..];
        let len = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-' | '+')))
            .unwrap_or(rest.len());
        self.pos += len;
        &rest[..len]
    }

    fn ident(&mut self) -> Result<&'a str, NetError> {
        self.skip_ws();
        let start = self.pos;
        let w = self.word();
        if !is_identifier(w) || w == "input" || w == "objective" {
            self.pos = start;
            return Err(self.err(if w.is_empty() {
                "expected a variable name".to_string()
            } else {
                format!("`{w}` is not a valid variable name")
            }));
        }
        Ok(w)
    }

    fn expect(&mut self, c: char) -> Result<(), NetError> {
        self.skip_ws();
        if self.text[self.pos..].starts_with(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    fn float(&mut self) -> Result<f64, NetError> {
        self.skip_ws();
        let start = self.pos;
        let w = self.word();
        match w.parse::<f64>() {
            Ok(v) if v.is_finite() && !w.is_empty() => Ok(v),
            _ => {
                self.pos = start;
                Err(self.err("expected a finite number"))
            }
        }
    }
}

fn parse_line(text: &str, line: usize) -> Result<Option<Stmt<'_>>, NetError> {
    let text = match text.find('#') {
        Some(i) => &text[..i],
        None => text,
    };
    let mut l = Line { text, line, pos: 0 };
    if l.at_end() {
        return Ok(None);
    }
    let start = l.pos;
    let head = l.word();
    let stmt = match head {
        "input" => {
            let name = l.ident()?;
            if l.at_end() {
                return Err(NetError::InputWithoutValue {
                    line,
                    name: name.to_string(),
                });
            }
            l.expect('=')?;
            let value = l.float()?;
            Stmt::Input { name, value }
        }
        "objective" => Stmt::Objective(l.ident()?),
        _ => {
            l.pos = start;
            let output = l.ident()?;
            l.expect('=')?;
            l.skip_ws();
            let prim_col = l.pos + 1;
            let prim = l.word();
            if prim.is_empty() {
                return Err(l.err("expected a primitive name"));
            }
            let op = Primitive::from_name(prim).ok_or_else(|| NetError::UnknownPrimitive {
                line,
                column: prim_col,
                name: prim.to_string(),
            })?;
            l.expect('(')?;
            let mut args = Vec::new();
            l.skip_ws();
            if !l.text[l.pos..].starts_with(')') {
                loop {
                    args.push(l.ident()?);
                    l.skip_ws();
                    if l.text[l.pos..].starts_with(',') {
                        l.pos += 1;
                    } else {
                        break;
                    }
                }
            }
            l.expect(')')?;
            if args.len() != op.arity() {
                return Err(NetError::Arity {
                    line,
                    op: op.name(),
                    expected: op.arity(),
                    found: args.len(),
                });
            }
            Stmt::Func { output, op, args }
        }
    };
    if !l.at_end() {
        return Err(l.err("unexpected trailing input"));
    }
    Ok(Some(stmt))
}

/// Parses and validates a network written in the DSL.
pub fn parse_network<'a>(text: &'a str) -> Result<FunctionNetwork, NetError> {
    let mut inputs: Vec<(&str, f64)> = Vec::new();
    let mut funcs: Vec<(&str, Primitive, Vec<&str>)> = Vec::new();
    let mut objective: Option<&str> = None;
    let mut defined_on: HashMap<&str, usize> = HashMap::new();
    // Every name in order of first mention; the leftovers after inputs and
    // outputs are reported as undefined during validation.
    let mut mentioned: Vec<&str> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let Some(stmt) = parse_line(raw, line)? else {
            continue;
        };
        let mut define = |name: &'a str| -> Result<(), NetError> {
            if defined_on.insert(name, line).is_some() {
                return Err(NetError::DuplicateDefinition {
                    line,
                    name: name.to_string(),
                });
            }
            Ok(())
        };
        match stmt {
            Stmt::Input { name, value } => {
                define(name)?;
                mentioned.push(name);
                inputs.push((name, value));
            }
            Stmt::Func { output, op, args } => {
                if args.contains(&output) {
                    return Err(NetError::SelfReference {
                        line,
                        name: output.to_string(),
                    });
                }
                define(output)?;
                mentioned.push(output);
                mentioned.extend(args.iter().copied());
                funcs.push((output, op, args));
            }
            Stmt::Objective(name) => {
                if objective.is_some() {
                    return Err(NetError::DuplicateObjective { line });
                }
                objective = Some(name);
            }
        }
    }
    let objective = objective.ok_or(NetError::MissingObjective)?;

    let mut names: Vec<String> = Vec::new();
    let mut index: HashMap<&'a str, VarId> = HashMap::new();
    let mut intern = |n: &'a str, names: &mut Vec<String>| -> VarId {
        *index.entry(n).or_insert_with(|| {
            names.push(n.to_string());
            VarId(names.len() - 1)
        })
    };
    let input_ids: Vec<VarId> = inputs.iter().map(|(n, _)| intern(n, &mut names)).collect();
    let mut input_values = BTreeMap::new();
    for (id, (_, value)) in input_ids.iter().zip(&inputs) {
        input_values.insert(*id, *value);
    }
    for (out, _, _) in &funcs {
        intern(out, &mut names);
    }
    for n in &mentioned {
        intern(n, &mut names);
    }
    if !names.iter().any(|n| n == objective) {
        return Err(NetError::UnknownObjective(objective.to_string()));
    }
    let objective = intern(objective, &mut names);
    let functions = funcs
        .iter()
        .map(|(out, op, args)| FuncNode {
            output: intern(out, &mut names),
            op: *op,
            inputs: args.iter().map(|a| intern(a, &mut names)).collect(),
        })
        .collect();

    let net = FunctionNetwork::from_parts(names, functions, input_ids, input_values, objective);
    validate_network(&net)?;
    Ok(net)
}
