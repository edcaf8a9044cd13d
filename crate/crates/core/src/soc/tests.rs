use super::*;
use crate::dtree::parse_dts;
use devices::{gpio_reg, i2c_reg, wifi_reg};

const BOARD: &str = include_str!("../../../../data/board.dts");

fn board() -> (DeviceTree, Soc) {
    let t = parse_dts(BOARD).unwrap();
    let soc = Soc::new(&t, MemoryMap::default(), CostModel::default()).unwrap();
    (t, soc)
}

fn base(t: &DeviceTree, label: &str) -> u32 {
    t.node(t.by_label(label).unwrap()).reg.unwrap().base
}

fn ns(op: Op, addr: u32, value: u32) -> BusAccess {
    BusAccess {
        world: World::NonSecure,
        op,
        addr,
        width: 4,
        value,
        strongly_ordered: true,
    }
}

#[test]
fn reset_state_admits_uart_status() {
    let (t, mut soc) = board();
    let r = soc.bus_access(ns(Op::Read, base(&t, "uart1") + 4, 0)).unwrap();
    assert_eq!(r, BusOutcome::Ok(devices::uart_reg::STATUS_TX_READY));
    assert_eq!(soc.counters.som_load, 1);
}

#[test]
fn secure_only_wifi_field_denies_ns() {
    let (t, mut soc) = board();
    let wifi = base(&t, "wlan");
    soc.csu_set(3, 0, CslLevel::SecureOnly).unwrap();
    assert_eq!(soc.bus_access(ns(Op::Read, wifi + 4, 0)).unwrap(), BusOutcome::BusError);
    assert_eq!(soc.counters.aborts, 1);
    assert_eq!(soc.counters.som_load, 0);
    let s = soc.bus_access(BusAccess::secure_write(wifi + 8, 4, 0x1234)).unwrap();
    assert_eq!(s, BusOutcome::Ok(0));
    assert_eq!(
        soc.bus_access(BusAccess::secure_read(wifi + 8, 4)).unwrap(),
        BusOutcome::Ok(0x1234)
    );
    // Secure accesses are not charged to the NS cost model.
    assert_eq!(soc.counters.mmio_time_ns(&soc.cost_model), 0);
}

#[test]
fn i2c_field_denies_every_register() {
    let (t, mut soc) = board();
    soc.csu_set(4, 0, CslLevel::SecureOnly).unwrap();
    let i2c2 = base(&t, "i2c2");
    for off in [0, 4, 8, 0x3ffc] {
        assert_eq!(soc.bus_access(ns(Op::Read, i2c2 + off, 0)).unwrap(), BusOutcome::BusError);
    }
    let i2c1 = base(&t, "i2c1");
    assert!(matches!(soc.bus_access(ns(Op::Read, i2c1, 0)).unwrap(), BusOutcome::Ok(_)));
}

#[test]
fn shared_field_covers_both_gpio_controllers() {
    let (t, mut soc) = board();
    soc.csu_set(1, 0, CslLevel::SecureOnly).unwrap();
    for l in ["gpio1", "gpio2"] {
        assert_eq!(soc.bus_access(ns(Op::Read, base(&t, l), 0)).unwrap(), BusOutcome::BusError);
    }
    assert!(matches!(
        soc.bus_access(ns(Op::Read, base(&t, "gpio3"), 0)).unwrap(),
        BusOutcome::Ok(_)
    ));
}

#[test]
fn secure_ram_is_ns_none_at_reset() {
    let (_, mut soc) = board();
    let a = soc.map.secure_base + 0x100;
    assert_eq!(soc.bus_access(ns(Op::Read, a, 0)).unwrap(), BusOutcome::BusError);
    assert_eq!(soc.bus_access(ns(Op::Write, a, 1)).unwrap(), BusOutcome::BusError);
    soc.bus_access(BusAccess::secure_write(a, 4, 7)).unwrap();
    assert_eq!(soc.bus_access(BusAccess::secure_read(a, 4)).unwrap(), BusOutcome::Ok(7));
}

#[test]
fn framebuffer_read_only_region() {
    let (_, mut soc) = board();
    let fb = soc.map.secure_fb_base;
    soc.tzasc_set_region(fb, soc.map.secure_fb_size, TzascPerm::NsReadOnly).unwrap();
    assert!(matches!(soc.bus_access(ns(Op::Read, fb, 0)).unwrap(), BusOutcome::Ok(_)));
    assert_eq!(soc.bus_access(ns(Op::Write, fb, 0)).unwrap(), BusOutcome::BusError);
    let ipu = soc.device(soc.devices().iter().find(|d| d.name == "ipu").unwrap().node).unwrap().node;
    assert_eq!(
        soc.dma_transfer(ipu, DmaDirection::FromMemory, fb, 0x1000).unwrap(),
        BusOutcome::Ok(0)
    );
}

#[test]
fn dma_admission() {
    let (t, mut soc) = board();
    let wifi = t.by_label("wlan").unwrap();
    assert_eq!(
        soc.dma_transfer(wifi, DmaDirection::ToMemory, 0x2000_0000, 0x10000).unwrap(),
        BusOutcome::Ok(0)
    );
    assert_eq!(
        soc.dma_transfer(wifi, DmaDirection::FromMemory, soc.map.secure_base, 64).unwrap(),
        BusOutcome::BusError
    );
    // Straddling into the secure region is refused as a whole.
    assert_eq!(
        soc.dma_transfer(wifi, DmaDirection::ToMemory, soc.map.secure_base - 16, 64).unwrap(),
        BusOutcome::BusError
    );
    assert_eq!(soc.counters.dma_bytes, 0x10000);
    assert_eq!(soc.counters.dma_errors, 2);
    let uart = t.by_label("uart1").unwrap();
    assert!(soc.dma_transfer(uart, DmaDirection::ToMemory, 0x2000_0000, 4).is_err());
}

#[test]
fn wifi_doorbell_runs_dma() {
    let (t, mut soc) = board();
    let w = base(&t, "wlan");
    soc.bus_access(ns(Op::Write, w + wifi_reg::CMD, wifi_reg::CMD_RX)).unwrap();
    soc.bus_access(ns(Op::Write, w + wifi_reg::DMA_RING_BASE, 0x2000_0000)).unwrap();
    soc.bus_access(ns(Op::Write, w + wifi_reg::DMA_DOORBELL, 0x10000)).unwrap();
    assert_eq!(soc.counters.dma_bytes, 0x10000);
    assert_eq!(
        soc.bus_access(ns(Op::Read, w + wifi_reg::STATUS, 0)).unwrap(),
        BusOutcome::Ok(wifi_reg::STATUS_READY | wifi_reg::STATUS_DONE)
    );
    let ev = soc.take_events();
    assert_eq!(ev.len(), 1);

    soc.bus_access(ns(Op::Write, w + wifi_reg::DMA_RING_BASE, soc.map.secure_base)).unwrap();
    soc.bus_access(ns(Op::Write, w + wifi_reg::DMA_DOORBELL, 0x100)).unwrap();
    let s = soc.bus_access(ns(Op::Read, w + wifi_reg::STATUS, 0)).unwrap();
    assert_eq!(s, BusOutcome::Ok(wifi_reg::STATUS_READY | wifi_reg::STATUS_ERROR));
}

#[test]
fn unmapped_and_malformed_accesses() {
    let (_, mut soc) = board();
    assert_eq!(
        soc.bus_access(ns(Op::Read, 0x0000_1000, 0)),
        Err(SocError::UnmappedAddress(0x1000))
    );
    let mut a = ns(Op::Read, 0x1000_0002, 0);
    assert_eq!(soc.bus_access(a), Err(SocError::Misaligned { addr: 0x1000_0002 }));
    a.width = 3;
    assert_eq!(soc.bus_access(a), Err(SocError::BadWidth(3)));
}

#[test]
fn sub_word_device_access() {
    let (t, mut soc) = board();
    let g = base(&t, "gpio3");
    soc.bus_access(BusAccess::secure_write(g + gpio_reg::GDIR, 4, 0xFFFF_0000)).unwrap();
    soc.bus_access(BusAccess::secure_write(g + gpio_reg::GDIR + 1, 1, 0xAB)).unwrap();
    assert_eq!(
        soc.bus_access(BusAccess::secure_read(g + gpio_reg::GDIR, 4)).unwrap(),
        BusOutcome::Ok(0xFFFF_AB00)
    );
    assert_eq!(
        soc.bus_access(BusAccess::secure_read(g + gpio_reg::GDIR + 2, 2)).unwrap(),
        BusOutcome::Ok(0xFFFF)
    );
}

#[test]
fn csu_registers_are_secure_only_and_reflect_state() {
    let (t, mut soc) = board();
    let csu = base(&t, "csu");
    assert_eq!(soc.bus_access(ns(Op::Read, csu + 4, 0)).unwrap(), BusOutcome::BusError);
    soc.csu_set(1, 1, CslLevel::SecureOnly).unwrap();
    assert_eq!(soc.bus_access(BusAccess::secure_read(csu + 4, 4)).unwrap(), BusOutcome::Ok(0b10));
}

#[test]
fn gpio_pad_raises_gic_line() {
    let (t, mut soc) = board();
    let g3 = t.by_label("gpio3").unwrap();
    soc.bus_access(BusAccess::secure_write(base(&t, "gpio3") + gpio_reg::IMR, 4, 0xF)).unwrap();
    soc.gic.configure(70, true, IrqGroup::FiqSecure).unwrap();
    soc.set_gpio_pad(g3, 0, true).unwrap();
    assert_eq!(soc.gic.take_secure(), Some(70));
    assert!(soc.gic.ns_pending().is_empty());
    assert_eq!(soc.gic.line(70).unwrap().alternate, Some(102));
}

#[test]
fn i2c_slaves_come_from_tree() {
    let (t, mut soc) = board();
    let c = base(&t, "i2c2");
    soc.bus_access(ns(Op::Write, c + i2c_reg::ADDR, 0x38)).unwrap();
    assert_eq!(soc.bus_access(ns(Op::Read, c + i2c_reg::STATUS, 0)).unwrap(), BusOutcome::Ok(0));
    soc.bus_access(ns(Op::Write, c + i2c_reg::ADDR, 0x1a)).unwrap();
    assert_eq!(
        soc.bus_access(ns(Op::Read, c + i2c_reg::STATUS, 0)).unwrap(),
        BusOutcome::Ok(i2c_reg::STATUS_NACK)
    );
}

#[test]
fn log_replays_against_snapshots() {
    let (t, mut soc) = board();
    soc.enable_log();
    let w = base(&t, "wlan");
    soc.bus_access(ns(Op::Read, w, 0)).unwrap();
    soc.csu_set(3, 0, CslLevel::SecureOnly).unwrap();
    soc.bus_access(ns(Op::Read, w, 0)).unwrap();
    soc.csu_set(3, 0, CslLevel::NsAllowed).unwrap();
    soc.bus_access(ns(Op::Read, w, 0)).unwrap();
    let log = soc.log().unwrap().to_vec();
    let verdicts: Vec<bool> = log
        .iter()
        .map(|r| match r {
            BusRecord::Access {
                access,
                resolved,
                firewall_version,
                admitted,
            } => {
                let fw = soc.firewall_at(*firewall_version).unwrap();
                assert_eq!(soc.admission(fw, *resolved, access), *admitted);
                *admitted
            }
            BusRecord::Dma { .. } => unreachable!(),
        })
        .collect();
    assert_eq!(verdicts, [true, false, true]);
}

#[test]
fn reset_restores_power_on_state() {
    let (t, mut soc) = board();
    let fresh = soc.firewall().clone();
    soc.csu_set(3, 0, CslLevel::SecureOnly).unwrap();
    soc.bus_access(ns(Op::Write, base(&t, "uart1"), 0x41)).unwrap();
    soc.reset();
    assert_eq!(soc.firewall(), &fresh);
    assert!(soc.devices().iter().all(|d| d.accesses == 0));
    assert_eq!(soc.counters.som_store, 1);
}

#[test]
fn cost_accounting_plain_vs_som() {
    let (t, mut soc) = board();
    let u = base(&t, "uart1");
    let mut a = ns(Op::Read, u + 4, 0);
    a.strongly_ordered = false;
    soc.bus_access(a).unwrap();
    a.op = Op::Write;
    soc.bus_access(a).unwrap();
    soc.bus_access(ns(Op::Write, u, 0)).unwrap();
    let c = soc.counters;
    assert_eq!((c.plain_load, c.plain_store, c.som_store), (1, 1, 1));
    assert_eq!(c.mmio_time_ns(&soc.cost_model), 110 + 290 + 330);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    fn access() -> impl Strategy<Value = (bool, bool, u32, u32, u32)> {
        let addrs = prop_oneof![
            Just(0x0202_0004u32),
            Just(0x0219_0004),
            Just(0x021a_4000),
            Just(0x0209_c000),
            Just(0x021c_0000),
            Just(0x2000_0000),
            Just(0x4F00_0000),
            Just(0x4EC0_0000),
        ];
        (any::<bool>(), any::<bool>(), addrs, 0u32..8, 0u32..4)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Admission depends only on the firewall state at the time of the
        /// access, and NS-successful accesses never land on secure-only
        /// hardware.
        #[test]
        fn replay_and_isolation(
            ops in proptest::collection::vec(access(), 1..40),
        ) {
            let (_, mut soc) = board();
            soc.enable_log();
            for (secure_toggle, write, addr, reg, field) in ops {
                if secure_toggle {
                    let level = if write { CslLevel::SecureOnly } else { CslLevel::NsAllowed };
                    soc.csu_set(reg, field, level).unwrap();
                    continue;
                }
                let a = ns(if write { Op::Write } else { Op::Read }, addr, 0);
                let out = soc.bus_access(a).unwrap();
                if out != BusOutcome::BusError {
                    let r = soc.resolve(addr, 4).unwrap();
                    match r {
                        Resolved::Ram => prop_assert!(!soc.map.is_secure_ram(addr)),
                        Resolved::Device(i) => {
                            let d = &soc.devices()[i];
                            prop_assert!(!d.secure_only);
                            for &(r, f) in &d.csl {
                                prop_assert_eq!(soc.firewall().csl(r, f).unwrap(), CslLevel::NsAllowed);
                            }
                        }
                    }
                }
            }
            for rec in soc.log().unwrap() {
                if let BusRecord::Access { access, resolved, firewall_version, admitted } = rec {
                    let fw = soc.firewall_at(*firewall_version).unwrap();
                    prop_assert_eq!(soc.admission(fw, *resolved, access), *admitted);
                }
            }
        }

        #[test]
        fn time_is_dot_product(loads in 0u64..1000, stores in 0u64..1000, som in any::<bool>()) {
            let (t, mut soc) = board();
            let u = base(&t, "uart1");
            for i in 0..loads + stores {
                let mut a = ns(if i < loads { Op::Read } else { Op::Write }, u, 0);
                a.strongly_ordered = som;
                soc.bus_access(a).unwrap();
            }
            let (l, s) = if som { (270, 330) } else { (110, 290) };
            prop_assert_eq!(
                soc.counters.modeled_time_ns(&soc.cost_model),
                num_rational::Ratio::from_integer((loads * l + stores * s) as u128)
            );
        }
    }
}
