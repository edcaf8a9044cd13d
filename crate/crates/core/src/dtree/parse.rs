use std::collections::{BTreeMap, HashMap};

use sha2::{Digest, Sha256};

use super::{
    Cell, CslGeometry, DeviceKind, DeviceNode, DeviceTree, DtsError, GpioRef, NodeId, PropValue,
    ProtectRef, Reg,
};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Slash,
    LBrace,
    RBrace,
    Semi,
    Eq,
    Colon,
    LAngle,
    RAngle,
    Amp(String),
    Str(String),
    Word(String),
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'_' | b',' | b'.' | b'-' | b'+' | b'#' | b'@' | b'?')
}

impl<'a> Lexer<'a> {
    fn err(&self, msg: impl Into<String>) -> DtsError {
        DtsError::Syntax {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn skip_trivia(&mut self) -> Result<(), DtsError> {
        loop {
            match self.src.get(self.pos) {
                Some(b'\n') => {
                    self.line += 1;
                    self.pos += 1;
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'/') if self.src.get(self.pos + 1) == Some(&b'/') => {
                    while let Some(&b) = self.src.get(self.pos) {
                        if b == b'\n' {
                            break;
                        }
                        self.pos += 1;
                    }
                }
                Some(b'/') if self.src.get(self.pos + 1) == Some(&b'*') => {
                    let start = self.line;
                    self.pos += 2;
                    loop {
                        match self.src.get(self.pos) {
                            None => {
                                return Err(DtsError::Syntax {
                                    line: start,
                                    msg: "unterminated comment".into(),
                                })
                            }
                            Some(b'*') if self.src.get(self.pos + 1) == Some(&b'/') => {
                                self.pos += 2;
                                break;
                            }
                            Some(b'\n') => {
                                self.line += 1;
                                self.pos += 1;
                            }
                            Some(_) => self.pos += 1,
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn next(&mut self) -> Result<Option<(Tok, usize)>, DtsError> {
        self.skip_trivia()?;
        let line = self.line;
        let Some(&b) = self.src.get(self.pos) else {
            return Ok(None);
        };
        self.pos += 1;
        let tok = match b {
            b'/' => Tok::Slash,
            b'{' => Tok::LBrace,
            b'}' => Tok::RBrace,
            b';' => Tok::Semi,
            b'=' => Tok::Eq,
            b':' => Tok::Colon,
            b'<' => Tok::LAngle,
            b'>' => Tok::RAngle,
            b'&' => {
                let start = self.pos;
                while self.src.get(self.pos).is_some_and(|&c| is_word_byte(c)) {
                    self.pos += 1;
                }
                if start == self.pos {
                    return Err(self.err("expected label after '&'"));
                }
                Tok::Amp(self.text(start))
            }
            b'"' => {
                let mut s = Vec::new();
                loop {
                    match self.src.get(self.pos) {
                        None | Some(b'\n') => return Err(self.err("unterminated string")),
                        Some(b'"') => {
                            self.pos += 1;
                            break;
                        }
                        Some(b'\\') => {
                            let Some(&e) = self.src.get(self.pos + 1) else {
                                return Err(self.err("unterminated string"));
                            };
                            s.push(e);
                            self.pos += 2;
                        }
                        Some(&c) => {
                            s.push(c);
                            self.pos += 1;
                        }
                    }
                }
                Tok::Str(String::from_utf8(s).map_err(|_| self.err("string is not UTF-8"))?)
            }
            c if is_word_byte(c) => {
                let start = self.pos - 1;
                while self.src.get(self.pos).is_some_and(|&c| is_word_byte(c)) {
                    self.pos += 1;
                }
                Tok::Word(self.text(start))
            }
            c => return Err(self.err(format!("unexpected character {:?}", c as char))),
        };
        Ok(Some((tok, line)))
    }

    fn text(&self, start: usize) -> String {
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }
}

struct RawNode {
    name: String,
    unit_address: Option<u32>,
    label: Option<String>,
    props: Vec<(String, PropValue, usize)>,
    children: Vec<usize>,
    parent: Option<usize>,
    line: usize,
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    raw: Vec<RawNode>,
}

impl Parser {
    fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|t| t.1)
            .unwrap_or(1)
    }

    fn err(&self, msg: impl Into<String>) -> DtsError {
        DtsError::Syntax {
            line: self.line(),
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.pos + 1).map(|t| &t.0)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.0.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), DtsError> {
        match self.peek() {
            Some(t) if *t == want => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(self.err(format!("expected {what}, found {t:?}"))),
            None => Err(self.err(format!("expected {what}, found end of input"))),
        }
    }

    fn file(&mut self) -> Result<(), DtsError> {
        self.expect(Tok::Slash, "'/'")?;
        let line = self.line();
        self.raw.push(RawNode {
            name: String::new(),
            unit_address: None,
            label: None,
            props: Vec::new(),
            children: Vec::new(),
            parent: None,
            line,
        });
        self.expect(Tok::LBrace, "'{'")?;
        self.body(0)?;
        self.expect(Tok::Semi, "';' after root node")?;
        if let Some(t) = self.peek() {
            return Err(self.err(format!("trailing input {t:?}")));
        }
        Ok(())
    }

    fn body(&mut self, idx: usize) -> Result<(), DtsError> {
        loop {
            match (self.peek().cloned(), self.peek2().cloned()) {
                (Some(Tok::RBrace), _) => {
                    self.pos += 1;
                    return Ok(());
                }
                (Some(Tok::Word(w)), Some(Tok::Colon)) => {
                    self.pos += 2;
                    self.child(idx, Some(w))?;
                }
                (Some(Tok::Word(_)), Some(Tok::LBrace)) => self.child(idx, None)?,
                (Some(Tok::Word(w)), Some(Tok::Eq)) => {
                    let line = self.line();
                    self.pos += 2;
                    let v = self.value()?;
                    self.expect(Tok::Semi, "';' after property")?;
                    if w.contains('@') {
                        return Err(DtsError::Syntax {
                            line,
                            msg: format!("invalid property name {w}"),
                        });
                    }
                    self.raw[idx].props.push((w, v, line));
                }
                (Some(t), _) => return Err(self.err(format!("unexpected {t:?} in node body"))),
                (None, _) => return Err(self.err("unexpected end of input in node body")),
            }
        }
    }

    fn child(&mut self, parent: usize, label: Option<String>) -> Result<(), DtsError> {
        let line = self.line();
        let Some(Tok::Word(w)) = self.bump() else {
            return Err(self.err("expected node name"));
        };
        let (name, unit_address) = match w.split_once('@') {
            Some((n, a)) => {
                let addr = u32::from_str_radix(a, 16).map_err(|_| DtsError::Syntax {
                    line,
                    msg: format!("bad unit address in {w}"),
                })?;
                (n.to_string(), Some(addr))
            }
            None => (w, None),
        };
        if name.is_empty() || name.contains('@') {
            return Err(DtsError::Syntax {
                line,
                msg: "bad node name".into(),
            });
        }
        if let Some(l) = &label {
            if l.contains('@') || l.starts_with(|c: char| c.is_ascii_digit()) {
                return Err(DtsError::Syntax {
                    line,
                    msg: format!("bad label {l}"),
                });
            }
        }
        self.expect(Tok::LBrace, "'{'")?;
        let idx = self.raw.len();
        self.raw.push(RawNode {
            name,
            unit_address,
            label,
            props: Vec::new(),
            children: Vec::new(),
            parent: Some(parent),
            line,
        });
        self.raw[parent].children.push(idx);
        self.body(idx)?;
        self.expect(Tok::Semi, "';' after node")?;
        Ok(())
    }

    fn value(&mut self) -> Result<PropValue, DtsError> {
        let line = self.line();
        let err = |msg: &str| DtsError::Syntax {
            line,
            msg: msg.to_string(),
        };
        match self.bump() {
            Some(Tok::Str(s)) => Ok(PropValue::Str(s)),
            Some(Tok::Amp(l)) => Ok(PropValue::Ref(l)),
            Some(Tok::LAngle) => {
                let mut cells = Vec::new();
                loop {
                    match self.bump() {
                        Some(Tok::RAngle) => break,
                        Some(Tok::Amp(l)) => cells.push(Cell::Ref(l)),
                        Some(Tok::Word(w)) => {
                            let v = parse_int(&w)
                                .ok_or_else(|| err(&format!("bad integer cell {w}")))?;
                            cells.push(Cell::Num(v));
                        }
                        _ => return Err(err("expected cell or '>'")),
                    }
                }
                if cells.is_empty() {
                    return Err(err("empty cell list"));
                }
                Ok(PropValue::Cells(cells))
            }
            _ => Err(err("expected property value")),
        }
    }
}

fn parse_int(w: &str) -> Option<u32> {
    if let Some(h) = w.strip_prefix("0x").or_else(|| w.strip_prefix("0X")) {
        u32::from_str_radix(h, 16).ok()
    } else {
        w.parse().ok()
    }
}

/// Parses the DTS subset and returns a fully linked, validated tree.
pub fn parse_dts(text: &str) -> Result<DeviceTree, DtsError> {
    let mut lexer = Lexer {
        src: text.as_bytes(),
        pos: 0,
        line: 1,
    };
    let mut toks = Vec::new();
    while let Some(t) = lexer.next()? {
        toks.push(t);
    }
    let mut p = Parser {
        toks,
        pos: 0,
        raw: Vec::new(),
    };
    p.file()?;
    let digest: [u8; 32] = Sha256::digest(text.as_bytes()).into();
    link(p.raw, digest)
}

fn link(raw: Vec<RawNode>, source_digest: [u8; 32]) -> Result<DeviceTree, DtsError> {
    let mut labels: BTreeMap<String, NodeId> = BTreeMap::new();
    for (i, r) in raw.iter().enumerate() {
        if let Some(l) = &r.label {
            if labels.insert(l.clone(), NodeId(i)).is_some() {
                return Err(DtsError::DuplicateLabel(l.clone()));
            }
        }
    }
    let resolve = |l: &str| {
        labels
            .get(l)
            .copied()
            .ok_or_else(|| DtsError::UnresolvedReference(l.to_string()))
    };

    let mut nodes = Vec::with_capacity(raw.len());
    for (i, r) in raw.iter().enumerate() {
        let mut node = DeviceNode {
            id: NodeId(i),
            parent: r.parent.map(NodeId),
            children: r.children.iter().map(|&c| NodeId(c)).collect(),
            name: r.name.clone(),
            label: r.label.clone(),
            unit_address: r.unit_address,
            reg: None,
            compatible: None,
            class: None,
            protect: Vec::new(),
            bus_address: None,
            interrupt_parent: None,
            interrupts: None,
            ns_interrupts: None,
            gpio_deps: Vec::new(),
            csl_geometry: None,
            extra: Vec::new(),
            line: r.line,
        };
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (name, value, line) in &r.props {
            let line = *line;
            let bad = |msg: &str| DtsError::Syntax {
                line,
                msg: format!("{name}: {msg}"),
            };
            let repeatable = matches!(name.as_str(), "protect" | "gpios");
            if seen.insert(name.as_str(), line).is_some() && !repeatable {
                return Err(bad("duplicate property"));
            }
            match name.as_str() {
                "reg" => {
                    let [base, size] = nums::<2>(value).ok_or_else(|| bad("expected <base size>"))?;
                    node.reg = Some(Reg { base, size });
                }
                "compatible" => node.compatible = Some(string(value).ok_or_else(|| bad("expected string"))?),
                "class" => node.class = Some(string(value).ok_or_else(|| bad("expected string"))?),
                "protect" => {
                    let cells = cells(value).ok_or_else(|| bad("expected <&ctrl reg field>"))?;
                    if cells.len() % 3 != 0 {
                        return Err(bad("expected triples <&ctrl reg field>"));
                    }
                    for t in cells.chunks(3) {
                        match t {
                            [Cell::Ref(l), Cell::Num(register), Cell::Num(field)] => {
                                node.protect.push(ProtectRef {
                                    controller: resolve(l)?,
                                    register: *register,
                                    field: *field,
                                })
                            }
                            _ => return Err(bad("expected triples <&ctrl reg field>")),
                        }
                    }
                }
                "interrupt-parent" => {
                    let l = match value {
                        PropValue::Ref(l) => l,
                        PropValue::Cells(c) => match c.as_slice() {
                            [Cell::Ref(l)] => l,
                            _ => return Err(bad("expected &label")),
                        },
                        _ => return Err(bad("expected &label")),
                    };
                    node.interrupt_parent = Some(resolve(l)?);
                }
                "interrupts" => {
                    let [n] = nums::<1>(value).ok_or_else(|| bad("expected <n>"))?;
                    node.interrupts = Some(n);
                }
                "ns-interrupts" => {
                    let [n] = nums::<1>(value).ok_or_else(|| bad("expected <n>"))?;
                    node.ns_interrupts = Some(n);
                }
                "gpios" => {
                    let cells = cells(value).ok_or_else(|| bad("expected <&ctrl pin>"))?;
                    if cells.len() % 2 != 0 {
                        return Err(bad("expected pairs <&ctrl pin>"));
                    }
                    for t in cells.chunks(2) {
                        match t {
                            [Cell::Ref(l), Cell::Num(pin)] => node.gpio_deps.push(GpioRef {
                                controller: resolve(l)?,
                                pin: *pin,
                            }),
                            _ => return Err(bad("expected pairs <&ctrl pin>")),
                        }
                    }
                }
                "i2c-addr" => {
                    let [a] = nums::<1>(value).ok_or_else(|| bad("expected <addr>"))?;
                    if a > 0x7f {
                        return Err(bad("I2C address out of 7-bit range"));
                    }
                    node.bus_address = Some(a as u8);
                }
                "csl-geometry" => {
                    let [registers, fields_per_register] =
                        nums::<2>(value).ok_or_else(|| bad("expected <registers fields>"))?;
                    if registers == 0 || fields_per_register == 0 {
                        return Err(bad("geometry must be non-zero"));
                    }
                    node.csl_geometry = Some(CslGeometry {
                        registers,
                        fields_per_register,
                    });
                }
                _ => {
                    match value {
                        PropValue::Ref(l) => {
                            resolve(l)?;
                        }
                        PropValue::Cells(cs) => {
                            for c in cs {
                                if let Cell::Ref(l) = c {
                                    resolve(l)?;
                                }
                            }
                        }
                        PropValue::Str(_) => {}
                    }
                    node.extra.push((name.clone(), value.clone()));
                }
            }
        }
        nodes.push(node);
    }

    let mut class_index: BTreeMap<String, Vec<NodeId>> = BTreeMap::new();
    for n in &nodes {
        if let Some(c) = &n.class {
            class_index.entry(c.clone()).or_default().push(n.id);
        }
    }
    let tree = DeviceTree {
        nodes,
        nodes_by_label: labels,
        class_index,
        source_digest,
    };
    validate(&tree)?;
    Ok(tree)
}

fn validate(tree: &DeviceTree) -> Result<(), DtsError> {
    for n in tree.nodes() {
        let invalid = |msg: String| DtsError::Invalid { line: n.line, msg };
        for p in &n.protect {
            let ctrl = tree.node(p.controller);
            let Some(g) = ctrl.csl_geometry else {
                return Err(invalid(format!(
                    "protect references {} which declares no csl-geometry",
                    ctrl.full_name()
                )));
            };
            if p.register >= g.registers || p.field >= g.fields_per_register {
                return Err(invalid(format!(
                    "protect <{} {}> outside geometry {}x{}",
                    p.register, p.field, g.registers, g.fields_per_register
                )));
            }
        }
        let on_i2c = tree.on_i2c_bus(n.id).is_some();
        match (on_i2c, n.bus_address) {
            (true, None) => {
                return Err(invalid(format!("{} sits on an I2C bus but has no i2c-addr", n.full_name())))
            }
            (false, Some(_)) => {
                return Err(invalid(format!("{} has i2c-addr but its parent is not an I2C bus", n.full_name())))
            }
            _ => {}
        }
        if let Some(ua) = n.unit_address {
            let expected = n
                .reg
                .map(|r| r.base)
                .or(n.bus_address.map(u32::from));
            if let Some(e) = expected {
                if e != ua {
                    return Err(invalid(format!(
                        "unit address {ua:#x} of {} does not match {e:#x}",
                        n.name
                    )));
                }
            }
        }
        if let Some(r) = n.reg {
            if r.size == 0 {
                return Err(invalid(format!("{} has a zero-size reg", n.full_name())));
            }
            if r.end() > 1 << 32 {
                return Err(invalid(format!("{} reg wraps the address space", n.full_name())));
            }
        }
        for g in &n.gpio_deps {
            if tree.node(g.controller).kind() != DeviceKind::Gpio {
                return Err(invalid(format!("gpios of {} does not reference a GPIO controller", n.full_name())));
            }
            if g.pin >= 32 {
                return Err(invalid(format!("GPIO pin {} out of range", g.pin)));
            }
        }
        if let Some(ir) = tree.effective_interrupt(n.id) {
            if let Some(p) = ir.parent {
                if tree.node(p).kind() != DeviceKind::Gpio {
                    return Err(invalid(format!(
                        "interrupt parent of {} is neither a GIC nor a GPIO controller",
                        n.full_name()
                    )));
                }
                if ir.line >= 32 {
                    return Err(invalid(format!("GPIO interrupt pin {} out of range", ir.line)));
                }
            }
        }
        // Sibling MMIO ranges must be disjoint. Also compare bus addresses.
        let kids: Vec<&DeviceNode> = n.children.iter().map(|&c| tree.node(c)).collect();
        for (i, a) in kids.iter().enumerate() {
            for b in &kids[i + 1..] {
                if let (Some(ra), Some(rb)) = (a.reg, b.reg) {
                    if ra.overlaps(&rb) {
                        return Err(DtsError::Invalid {
                            line: b.line,
                            msg: format!("{} overlaps sibling {}", b.full_name(), a.full_name()),
                        });
                    }
                }
                if a.bus_address.is_some() && a.bus_address == b.bus_address {
                    return Err(DtsError::Invalid {
                        line: b.line,
                        msg: format!("{} reuses I2C address of {}", b.full_name(), a.full_name()),
                    });
                }
            }
        }
    }
    Ok(())
}

fn cells(v: &PropValue) -> Option<&[Cell]> {
    match v {
        PropValue::Cells(c) => Some(c),
        _ => None,
    }
}

fn nums<const N: usize>(v: &PropValue) -> Option<[u32; N]> {
    let c = cells(v)?;
    if c.len() != N {
        return None;
    }
    let mut out = [0; N];
    for (o, cell) in out.iter_mut().zip(c) {
        match cell {
            Cell::Num(n) => *o = *n,
            Cell::Ref(_) => return None,
        }
    }
    Some(out)
}

fn string(v: &PropValue) -> Option<String> {
    match v {
        PropValue::Str(s) => Some(s.clone()),
        _ => None,
    }
}
