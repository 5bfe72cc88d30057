//! Text grammar:
//!
//! ```text
//! function    := "func" NAME [ "(" operand ("," operand)* ")" ] "{" line* "}"
//! line        := LABEL ":" | instruction
//! instruction := [ operand "=" ] OPCODE [ operand ("," operand)* ]
//! operand     := "%" NAME [ ":" TYPE ] | "$" REG | INTEGER | "@" SLOT | LABEL
//! ```
//!
//! One instruction per line; `;` starts a comment. A vreg's type may be
//! omitted after its first annotated occurrence. `call` lists the physical
//! registers it clobbers as its operands.

use std::collections::BTreeMap;

use super::{BasicBlock, Instruction, MachineFunction, MirError, Opcode, Operand, VReg};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    VReg(String),
    PReg(String),
    Slot(u32),
    Int(i64),
    Punct(char),
}

fn syntax(line: usize, msg: impl Into<String>) -> MirError {
    MirError::Syntax {
        line,
        msg: msg.into(),
    }
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn lex_line(line_no: usize, line: &str) -> Result<Vec<Tok>, MirError> {
    let line = line.split(';').next().unwrap_or("");
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    let mut toks = Vec::new();
    let take_name = |i: &mut usize| {
        let start = *i;
        while *i < chars.len() && is_name_char(chars[*i]) {
            *i += 1;
        }
        chars[start..*i].iter().collect::<String>()
    };
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '{' | '}' | '(' | ')' | ',' | '=' | ':' => {
                toks.push(Tok::Punct(c));
                i += 1;
            }
            '%' | '$' | '@' => {
                i += 1;
                let name = take_name(&mut i);
                if name.is_empty() {
                    return Err(syntax(line_no, format!("expected a name after `{c}`")));
                }
                toks.push(match c {
                    '%' => Tok::VReg(name),
                    '$' => Tok::PReg(name),
                    _ => Tok::Slot(
                        name.parse()
                            .map_err(|_| syntax(line_no, format!("bad stack slot `@{name}`")))?,
                    ),
                });
            }
            '-' | '0'..='9' => {
                let start = i;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let v = text
                    .parse()
                    .map_err(|_| syntax(line_no, format!("bad integer `{text}`")))?;
                toks.push(Tok::Int(v));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                toks.push(Tok::Ident(take_name(&mut i)));
            }
            other => return Err(syntax(line_no, format!("unexpected character `{other}`"))),
        }
    }
    Ok(toks)
}

struct Cursor<'a> {
    toks: &'a [Tok],
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<&'a Tok> {
        let t = self.toks.get(self.pos);
        self.pos += 1;
        t
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn done(&self) -> bool {
        self.pos >= self.toks.len()
    }

    /// Parses one operand; untyped vregs carry an empty type until resolved.
    fn operand(&mut self) -> Result<Operand, MirError> {
        match self.next() {
            Some(Tok::VReg(name)) => {
                let ty = if self.eat(':') {
                    match self.next() {
                        Some(Tok::Ident(t)) => t.clone(),
                        _ => return Err(syntax(self.line, "expected a type after `:`")),
                    }
                } else {
                    String::new()
                };
                Ok(Operand::Virtual(VReg::new(name.clone(), ty)))
            }
            Some(Tok::PReg(r)) => Ok(Operand::Physical(r.clone())),
            Some(Tok::Slot(s)) => Ok(Operand::Slot(*s)),
            Some(Tok::Int(v)) => Ok(Operand::Imm(*v)),
            Some(Tok::Ident(l)) => Ok(Operand::Label(l.clone())),
            other => Err(syntax(self.line, format!("expected an operand, found {other:?}"))),
        }
    }

    fn operand_list(&mut self) -> Result<Vec<Operand>, MirError> {
        let mut ops = Vec::new();
        if self.done() {
            return Ok(ops);
        }
        loop {
            ops.push(self.operand()?);
            if !self.eat(',') {
                break;
            }
        }
        Ok(ops)
    }
}

pub fn parse_function(text: &str) -> Result<MachineFunction, MirError> {
    let mut lines = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let toks = lex_line(i + 1, l)?;
        if !toks.is_empty() {
            lines.push((i + 1, toks));
        }
    }
    // Normalise so that `{` and `}` sit on their own logical lines.
    let mut logical: Vec<(usize, Vec<Tok>)> = Vec::new();
    for (no, toks) in lines {
        let mut cur = Vec::new();
        for t in toks {
            if t == Tok::Punct('{') {
                cur.push(t);
                logical.push((no, std::mem::take(&mut cur)));
            } else if t == Tok::Punct('}') {
                if !cur.is_empty() {
                    logical.push((no, std::mem::take(&mut cur)));
                }
                logical.push((no, vec![t]));
            } else {
                cur.push(t);
            }
        }
        if !cur.is_empty() {
            logical.push((no, cur));
        }
    }
    let mut it = logical.into_iter();
    let (hline, header) = it.next().ok_or_else(|| syntax(1, "empty input"))?;
    let mut c = Cursor {
        toks: &header,
        pos: 0,
        line: hline,
    };
    match c.next() {
        Some(Tok::Ident(k)) if k == "func" => {}
        _ => return Err(syntax(hline, "expected `func`")),
    }
    let name = match c.next() {
        Some(Tok::Ident(n)) => n.clone(),
        _ => return Err(syntax(hline, "expected a function name")),
    };
    let mut params = Vec::new();
    if c.eat('(') {
        if !c.eat(')') {
            loop {
                let op = c.operand()?;
                if !matches!(op, Operand::Virtual(_) | Operand::Physical(_)) {
                    return Err(syntax(hline, "parameters must be registers"));
                }
                params.push(op);
                if c.eat(')') {
                    break;
                }
                if !c.eat(',') {
                    return Err(syntax(hline, "expected `,` or `)` in parameter list"));
                }
            }
        }
    }
    if !c.eat('{') || !c.done() {
        return Err(syntax(hline, "expected `{` after function header"));
    }

    let mut blocks: Vec<BasicBlock> = Vec::new();
    let mut closed = false;
    for (no, toks) in it.by_ref() {
        if closed {
            return Err(syntax(no, "text after closing `}`"));
        }
        if toks == [Tok::Punct('}')] {
            closed = true;
            continue;
        }
        if let [Tok::Ident(label), Tok::Punct(':')] = toks.as_slice() {
            blocks.push(BasicBlock::new(label.clone(), Vec::new()));
            continue;
        }
        let inst = parse_instruction(no, &toks)?;
        if blocks.is_empty() {
            blocks.push(BasicBlock::new("entry", Vec::new()));
        }
        blocks.last_mut().expect("non-empty").insts.push(inst);
    }
    if !closed {
        return Err(syntax(text.lines().count().max(1), "missing closing `}`"));
    }
    resolve_types(&mut params, &mut blocks)?;
    MachineFunction::new(name, params, blocks)
}

fn parse_instruction(line: usize, toks: &[Tok]) -> Result<Instruction, MirError> {
    let eq = toks.iter().position(|t| *t == Tok::Punct('='));
    let (def_toks, rest) = match eq {
        Some(p) => (&toks[..p], &toks[p + 1..]),
        None => (&toks[..0], toks),
    };
    let mut defs = Vec::new();
    if !def_toks.is_empty() {
        let mut c = Cursor {
            toks: def_toks,
            pos: 0,
            line,
        };
        defs = c.operand_list()?;
        if !c.done() {
            return Err(syntax(line, "unexpected tokens before `=`"));
        }
    }
    let mut c = Cursor {
        toks: rest,
        pos: 0,
        line,
    };
    let spelling = match c.next() {
        Some(Tok::Ident(op)) => op.clone(),
        _ => return Err(syntax(line, "expected an opcode")),
    };
    let opcode =
        Opcode::from_spelling(&spelling).ok_or_else(|| MirError::UnknownOpcode(spelling.clone()))?;
    let mut uses = c.operand_list()?;
    if !c.done() {
        return Err(syntax(line, "unexpected trailing tokens"));
    }
    if opcode == Opcode::Call {
        if !defs.is_empty() {
            return Err(syntax(line, "`call` lists its clobbers as operands"));
        }
        defs = std::mem::take(&mut uses);
    }
    let mut inst = Instruction::new(opcode, defs, uses);
    if spelling != opcode.mnemonic() {
        inst.spelling = Some(spelling);
    }
    Ok(inst)
}

fn resolve_types(params: &mut [Operand], blocks: &mut [BasicBlock]) -> Result<(), MirError> {
    let mut types: BTreeMap<String, String> = BTreeMap::new();
    let all = params
        .iter()
        .chain(blocks.iter().flat_map(|b| b.insts.iter().flat_map(|i| i.operands())));
    for op in all {
        if let Operand::Virtual(v) = op {
            if !v.ty.is_empty() {
                types.entry(v.name.clone()).or_insert_with(|| v.ty.clone());
            }
        }
    }
    let fill = |op: &mut Operand| -> Result<(), MirError> {
        if let Operand::Virtual(v) = op {
            if v.ty.is_empty() {
                v.ty = types
                    .get(&v.name)
                    .cloned()
                    .ok_or_else(|| MirError::UntypedVreg(v.name.clone()))?;
            }
        }
        Ok(())
    };
    for p in params.iter_mut() {
        fill(p)?;
    }
    for b in blocks.iter_mut() {
        for i in b.insts.iter_mut() {
            for op in i.operands_mut() {
                fill(op)?;
            }
        }
    }
    Ok(())
}
