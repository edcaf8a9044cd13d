use std::collections::BTreeSet;

use cloaksim::dtree::{parse_dts, DeviceTree, DtsError, NodeId, ProtectRef};
use cloaksim::skernel::{SkError, Skernel};
use cloaksim::soc::{CostModel, MemoryMap};
use proptest::prelude::*;

const BOARD: &str = include_str!("../../../data/board.dts");

/// Spec for one generated node: parent index (into earlier nodes, or None
/// for a child of the bus root), whether it has registers, its protect
/// fields and whether it carries a class.
#[derive(Debug, Clone)]
struct Gen {
    parent: Option<usize>,
    mmio: bool,
    protect: Vec<(u32, u32)>,
    class: bool,
}

fn gen_tree() -> impl Strategy<Value = Vec<Gen>> {
    (1usize..10).prop_flat_map(|n| {
        (0..n)
            .map(|i| {
                let parent = if i == 0 {
                    Just(None).boxed()
                } else {
                    prop_oneof![Just(None), (0..i).prop_map(Some)].boxed()
                };
                (
                    parent,
                    any::<bool>(),
                    prop_oneof![
                        2 => Just(vec![]),
                        1 => proptest::collection::vec((0u32..2, 0u32..4), 1..3),
                    ],
                    proptest::bool::weighted(0.3),
                )
                    .prop_map(|(parent, mmio, protect, class)| Gen {
                        parent,
                        mmio,
                        protect,
                        class,
                    })
            })
            .collect::<Vec<_>>()
    })
}

fn render(nodes: &[Gen]) -> String {
    fn body(nodes: &[Gen], me: usize, depth: usize, out: &mut String) {
        let ind = "\t".repeat(depth);
        let g = &nodes[me];
        if g.mmio {
            out.push_str(&format!("{ind}reg = <{:#x} 0x1000>;\n", 0x1000_0000 + me * 0x1000));
        }
        for (r, f) in &g.protect {
            out.push_str(&format!("{ind}protect = <&csu {r} {f}>;\n"));
        }
        if g.class {
            out.push_str(&format!("{ind}class = \"c{me}\";\n"));
        }
        for (c, child) in nodes.iter().enumerate() {
            if child.parent == Some(me) {
                child_node(nodes, c, depth, out);
            }
        }
    }
    fn child_node(nodes: &[Gen], c: usize, depth: usize, out: &mut String) {
        let ind = "\t".repeat(depth);
        let unit = if nodes[c].mmio {
            format!("@{:x}", 0x1000_0000 + c * 0x1000)
        } else {
            String::new()
        };
        out.push_str(&format!("{ind}n{c}: node{c}{unit} {{\n"));
        body(nodes, c, depth + 1, out);
        out.push_str(&format!("{ind}}};\n"));
    }
    let mut out = String::from("/ {\n\tcsu: csu@2000000 {\n\t\treg = <0x2000000 0x1000>;\n");
    out.push_str("\t\tcompatible = \"fsl,imx6q-csu\";\n\t\tcsl-geometry = <2 4>;\n\t};\n");
    for (c, g) in nodes.iter().enumerate() {
        if g.parent.is_none() {
            child_node(nodes, c, 1, &mut out);
        }
    }
    out.push_str("};\n");
    out
}

type Fields = BTreeSet<(u32, u32)>;

/// Reference closure for trees without interrupt or GPIO dependencies,
/// computed on the generator's own parent links.
fn oracle(nodes: &[Gen], me: usize) -> Option<(Fields, BTreeSet<usize>)> {
    let chain = |mut i: usize| {
        let mut v = vec![i];
        while let Some(p) = nodes[i].parent {
            v.push(p);
            i = p;
        }
        v
    };
    let carried = |i: usize| -> Vec<(u32, u32)> {
        chain(i)
            .into_iter()
            .find(|&a| !nodes[a].protect.is_empty())
            .map(|a| nodes[a].protect.clone())
            .unwrap_or_default()
    };
    let carrier = |i: usize| chain(i).into_iter().find(|&a| !nodes[a].protect.is_empty());
    let inside: Vec<usize> = (0..nodes.len()).filter(|&i| chain(i).contains(&me)).collect();
    let mut bits: Fields = nodes[me].parent.map(carried).unwrap_or_default().into_iter().collect();
    for &i in &inside {
        bits.extend(nodes[i].protect.iter().copied());
    }
    if bits.is_empty() {
        return None;
    }
    let shared = (0..nodes.len())
        .filter(|i| !inside.contains(i))
        .filter(|&i| carried(i).iter().any(|b| bits.contains(b)))
        .filter(|&i| !(carrier(i) == Some(i) && !nodes[i].mmio))
        .collect();
    Some((bits, shared))
}

fn id(tree: &DeviceTree, i: usize) -> NodeId {
    tree.by_label(&format!("n{i}")).unwrap()
}

fn fields(set: &BTreeSet<ProtectRef>) -> Fields {
    set.iter().map(|p| (p.register, p.field)).collect()
}

proptest! {
    #[test]
    fn closure_matches_tree_walk(nodes in gen_tree()) {
        let tree = parse_dts(&render(&nodes)).unwrap();
        for i in 0..nodes.len() {
            let got = tree.protect_closure(id(&tree, i));
            match oracle(&nodes, i) {
                None => prop_assert!(matches!(got, Err(DtsError::NoProtection(_)))),
                Some((bits, shared)) => {
                    let plan = got.unwrap();
                    prop_assert_eq!(fields(&plan.protect), bits);
                    let want: BTreeSet<NodeId> = shared.into_iter().map(|s| id(&tree, s)).collect();
                    prop_assert_eq!(&plan.shared, &want);
                    let deny: BTreeSet<NodeId> = tree
                        .subtree(id(&tree, i))
                        .into_iter()
                        .filter(|&s| tree.node(s).reg.is_some())
                        .collect();
                    prop_assert_eq!(&plan.deny_regions, &deny);
                }
            }
        }
    }

    #[test]
    fn closure_covers_nearest_protected_ancestor(nodes in gen_tree()) {
        let tree = parse_dts(&render(&nodes)).unwrap();
        for i in 0..nodes.len() {
            let n = id(&tree, i);
            let Some(parent) = tree.node(n).parent else { continue };
            let above = tree.effective_protect(parent);
            match tree.protect_closure(n) {
                Ok(plan) => {
                    for p in above.iter().chain(&tree.node(n).protect) {
                        prop_assert!(plan.protect.contains(p));
                    }
                }
                Err(_) => prop_assert!(above.is_empty() && tree.node(n).protect.is_empty()),
            }
        }
    }

    #[test]
    fn canonical_form_is_a_fixed_point(nodes in gen_tree()) {
        let tree = parse_dts(&render(&nodes)).unwrap();
        let once = tree.to_dts();
        let again = parse_dts(&once).unwrap();
        prop_assert_eq!(&again.to_dts(), &once);
        prop_assert_eq!(again.classes_of(), tree.classes_of());
        for i in 0..nodes.len() {
            let (a, b) = (tree.protect_closure(id(&tree, i)).ok(), again.protect_closure(id(&again, i)).ok());
            prop_assert_eq!(a.map(|p| fields(&p.protect)), b.map(|p| fields(&p.protect)));
        }
    }

    #[test]
    fn unenforceable_classes_are_refused(nodes in gen_tree()) {
        let tree = parse_dts(&render(&nodes)).unwrap();
        let offered_unprotected = (0..nodes.len()).any(|i| nodes[i].class && oracle(&nodes, i).is_none());
        prop_assert_eq!(tree.check_enforceable().is_err(), offered_unprotected);
    }
}

#[test]
fn boot_refuses_unprotected_class() {
    let text = BOARD.replacen(
        "\tled {",
        "\tsensor@5000000 {\n\t\treg = <0x05000000 0x1000>;\n\t\tclass = \"barometer\";\n\t};\n\n\tled {",
        1,
    );
    assert!(text.contains("barometer"));
    let booted = Skernel::boot(parse_dts(&text).unwrap(), MemoryMap::default(), CostModel::default());
    assert!(matches!(booted, Err(SkError::TreeRejected(_))), "{:?}", booted.err());
}

#[test]
fn board_canonical_form_round_trips() {
    let tree = parse_dts(BOARD).unwrap();
    let text = tree.to_dts();
    assert_eq!(parse_dts(&text).unwrap().to_dts(), text);
}

#[test]
fn touchscreen_closure_on_board() {
    let tree = parse_dts(BOARD).unwrap();
    let ts = tree.find("ft5x06_ts@38").unwrap();
    let (i2c2, gpio1) = (tree.by_label("i2c2").unwrap(), tree.by_label("gpio1").unwrap());
    let node = tree.node(ts);
    assert_eq!(node.parent, Some(i2c2));
    assert_eq!(node.interrupt_parent, Some(gpio1));

    let plan = tree.protect_closure(ts).unwrap();
    assert_eq!(fields(&plan.protect), BTreeSet::from([(4, 0), (1, 0)]));
    assert_eq!(plan.gpio_pins.iter().map(|p| (p.controller, p.pin)).collect::<Vec<_>>(), [(gpio1, 9)]);
    assert_eq!(plan.i2c_slaves.iter().map(|s| (s.bus, s.address)).collect::<Vec<_>>(), [(i2c2, 0x38)]);
    assert!(plan.shared.contains(&tree.find("ov5642@3c").unwrap()));
    assert!(plan.shared.contains(&tree.by_label("gpio2").unwrap()));
    assert!(plan.shared.contains(&i2c2));
}

#[test]
fn single_hop_and_grandparent_protection() {
    let text = "/ {\n\tcsu: csu@2000000 { reg = <0x2000000 0x1000>; compatible = \"fsl,imx6q-csu\"; csl-geometry = <2 4>; };\n\
        \tsolo: solo@3000000 { reg = <0x3000000 0x1000>; protect = <&csu 0 1>; };\n\
        \tbus: bus {\n\t\tprotect = <&csu 1 2>;\n\t\tmid: mid {\n\t\t\tleaf: leaf@4000000 { reg = <0x4000000 0x1000>; };\n\
        \t\t\tpeer: peer@4001000 { reg = <0x4001000 0x1000>; };\n\t\t};\n\
        \t\tother: other@4002000 { reg = <0x4002000 0x1000>; };\n\t};\n};\n";
    let tree = parse_dts(text).unwrap();
    let solo = tree.protect_closure(tree.by_label("solo").unwrap()).unwrap();
    assert_eq!(fields(&solo.protect), BTreeSet::from([(0, 1)]));
    assert!(solo.gpio_pins.is_empty() && solo.i2c_slaves.is_empty() && solo.shared.is_empty());

    let leaf = tree.protect_closure(tree.by_label("leaf").unwrap()).unwrap();
    assert_eq!(fields(&leaf.protect), BTreeSet::from([(1, 2)]));
    let shared: BTreeSet<NodeId> = ["mid", "peer", "other"].iter().map(|l| tree.by_label(l).unwrap()).collect();
    assert_eq!(leaf.shared, shared);
}
