//! WebAssembly bindings for the browser demo. Every export takes plain
//! numbers or strings and returns a JSON document; the JSON builders are
//! ordinary functions so they can be tested natively.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use gecko_ftl::accounting::{footprint_ratio, io_overhead_bounds, ram_footprint, MetadataScheme};
use gecko_ftl::device::Device;
use gecko_ftl::lsm::GeckoLsm;
use gecko_ftl::nand::{Category, PhysAddr};
use gecko_ftl::sim::{full_map_bytes, halving_budgets, run_ram_sweep, SimConfig};
use gecko_ftl::{Geometry, LsmConfig, MergePolicy, Scheme};

fn preset(name: &str, over_provisioning: f64) -> Result<Geometry, String> {
    let g = match name {
        "intel525" => Geometry::intel_525(over_provisioning),
        "micronP420m" => Geometry::micron_p420m(over_provisioning),
        "desk" => Geometry {
            over_provisioning,
            ..Geometry::desk()
        },
        other => return Err(format!("unknown preset `{other}`")),
    };
    g.validate().map_err(|e| e.to_string())?;
    Ok(g)
}

fn lsm_config(size_ratio: u32) -> Result<LsmConfig, String> {
    if size_ratio < 2 {
        return Err("size ratio must be at least 2".into());
    }
    Ok(LsmConfig {
        size_ratio,
        ..LsmConfig::default()
    })
}

/// RAM breakdown of both schemes plus their IO bounds.
pub fn footprint_json(name: &str, over_provisioning: f64, size_ratio: u32) -> Result<Value, String> {
    let g = preset(name, over_provisioning)?;
    let lsm = lsm_config(size_ratio)?;
    let mut schemes = vec![];
    for (label, scheme) in [("lazy", MetadataScheme::Lazy), ("logarithmic", MetadataScheme::Logarithmic)] {
        let r = ram_footprint(scheme, &g, &lsm).map_err(|e| e.to_string())?;
        let b = io_overhead_bounds(scheme, &g, &lsm);
        schemes.push(json!({
            "scheme": label,
            "components": r.components.iter().map(|(n, v)| json!({"name": n, "bytes": v})).collect::<Vec<_>>(),
            "total": r.total(),
            "bounds": {
                "write_reads": b.per_write_reads,
                "write_writes": b.per_write_writes,
                "gc_reads": b.per_gc_reads,
                "gc_writes": b.per_gc_writes,
            },
        }));
    }
    Ok(json!({
        "geometry": {
            "blocks": g.blocks,
            "pages_per_block": g.pages_per_block,
            "page_size": g.page_size,
            "over_provisioning": g.over_provisioning,
            "logical_pages": g.logical_pages(),
        },
        "schemes": schemes,
        "ratio": footprint_ratio(&g, &lsm).map_err(|e| e.to_string())?,
    }))
}

/// Write amplification of each scheme as the RAM budget halves, on a
/// small device so it finishes quickly in a browser tab.
pub fn sweep_json(blocks: u32, pages_per_block: u32, ops: u32, steps: u32, seed: u32) -> Result<Value, String> {
    let g = Geometry::new(blocks, pages_per_block, 1024, 0.3, 4).map_err(|e| e.to_string())?;
    let mut cfg = SimConfig::new(g, Scheme::LazyIdeal);
    cfg.ops = u64::from(ops);
    cfg.seed = u64::from(seed);
    cfg.warmup_passes = 2.0;
    let budgets = halving_budgets(full_map_bytes(&cfg.ftl), steps.clamp(1, 16) as usize);
    let schemes = [Scheme::LazyIdeal, Scheme::Lazy, Scheme::Logarithmic];
    let rows: Vec<Value> = run_ram_sweep(&cfg, &schemes, &budgets)
        .iter()
        .map(|r| {
            let res = r.result();
            json!({
                "scheme": r.scheme.name(),
                "ram_bytes": r.ram_bytes,
                "wa": res.and_then(|x| x.report.write_amplification()),
                "lsm_share": res.and_then(|x| x.report.write_fraction(Category::Lsm)),
                "evictions_per_write": res.and_then(|x| x.report.evictions_per_write()),
                "error": r.outcome.as_ref().err(),
            })
        })
        .collect();
    Ok(json!({ "logical_pages": g.logical_pages(), "rows": rows }))
}

/// Shape of the tree after each flush under a uniform invalidation
/// stream with an occasional block rewrite.
pub fn lsm_json(events: u32, size_ratio: u32, multi_way: bool, compression_levels: u32, seed: u32) -> Result<Value, String> {
    let g = Geometry::desk();
    let cfg = LsmConfig {
        merge_policy: if multi_way {
            MergePolicy::MultiWay
        } else {
            MergePolicy::Cascade
        },
        compression_levels,
        ..lsm_config(size_ratio)?
    };
    let mut tree = GeckoLsm::new(g, cfg);
    let mut dev = Device::new(g);
    let mut x = u64::from(seed) | 1;
    let mut next = move || {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        x
    };
    let mut snapshots = vec![];
    let mut flushes = 0;
    for _ in 0..events.min(2_000_000) {
        let r = next();
        let block = (r % u64::from(g.blocks)) as u32;
        if (r >> 40) % 100 == 0 {
            tree.block_rewritten(&mut dev, block)
        } else {
            tree.invalidate(&mut dev, PhysAddr::new(block, ((r >> 20) % u64::from(g.pages_per_block)) as u32))
        }
        .map_err(|e| e.to_string())?;
        let s = tree.stats();
        if s.flushes != flushes {
            flushes = s.flushes;
            snapshots.push(json!({
                "flush": s.flushes,
                "runs": tree.runs().iter().map(|r| json!({
                    "level": r.level,
                    "pages": r.pages.len(),
                    "compressed": r.compressed,
                })).collect::<Vec<_>>(),
                "lsm_writes": dev.counters().writes(Category::Lsm),
                "lsm_reads": dev.counters().reads(Category::Lsm),
            }));
        }
    }
    let s = tree.stats();
    Ok(json!({
        "l_max": tree.l_max(),
        "events": s.invalidations + s.erase_events,
        "flushes": s.flushes,
        "merges": s.merges,
        "lsm_writes": dev.counters().writes(Category::Lsm),
        "lsm_reads": dev.counters().reads(Category::Lsm),
        "snapshots": snapshots,
    }))
}

fn to_js(v: Result<Value, String>) -> Result<String, JsValue> {
    v.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn ram_footprint_table(preset: &str, over_provisioning: f64, size_ratio: u32) -> Result<String, JsValue> {
    to_js(footprint_json(preset, over_provisioning, size_ratio))
}

#[wasm_bindgen]
pub fn ram_sweep(blocks: u32, pages_per_block: u32, ops: u32, steps: u32, seed: u32) -> Result<String, JsValue> {
    to_js(sweep_json(blocks, pages_per_block, ops, steps, seed))
}

#[wasm_bindgen]
pub fn lsm_explorer(events: u32, size_ratio: u32, multi_way: bool, compression_levels: u32, seed: u32) -> Result<String, JsValue> {
    to_js(lsm_json(events, size_ratio, multi_way, compression_levels, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn footprint_has_both_schemes() {
        let v = footprint_json("micronP420m", 0.3, 2).unwrap();
        assert_eq!(v["schemes"].as_array().unwrap().len(), 2);
        let ratio = v["ratio"].as_f64().unwrap();
        assert!(ratio > 0.0 && ratio < 0.05);
        assert!(footprint_json("nope", 0.3, 4).is_err());
        assert!(footprint_json("desk", 0.3, 1).is_err());
    }

    #[test]
    fn sweep_marks_infeasible_rows() {
        let v = sweep_json(64, 16, 2000, 6, 1).unwrap();
        let rows = v["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 18);
        assert!(rows.iter().any(|r| r["wa"].is_null() && r["error"].is_string()));
        assert!(rows[0]["wa"].as_f64().unwrap() >= 1.0);
    }

    #[test]
    fn explorer_snapshots_respect_l_max() {
        let v = lsm_json(50_000, 4, true, 2, 3).unwrap();
        let l_max = v["l_max"].as_u64().unwrap() as usize;
        let snaps = v["snapshots"].as_array().unwrap();
        assert_eq!(snaps.len() as u64, v["flushes"].as_u64().unwrap());
        for s in snaps {
            assert!(s["runs"].as_array().unwrap().len() <= l_max);
        }
    }
}
