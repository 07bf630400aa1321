use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use log::info;
use spreadlab_core::events::{ingest_events, select_clustering, EmbeddingSet, SeverityLabelMap};
use spreadlab_core::gateway::{Gateway, GatewayConfig, HttpTransport, ResponseCache, Transport};
use spreadlab_core::policy::read_decision_log;
use spreadlab_core::traits::{tukey_grouping, ResponseRatioTable};

use crate::error::CliError;
use crate::io::{self, OutDir};
use crate::{ClusterArgs, GroupArgs};

pub fn cluster_events(args: &ClusterArgs, out: &Path, force: bool, offline: bool) -> Result<(), CliError> {
    io::require(&args.events, "events file")?;
    let events = ingest_events(&args.events).map_err(|e| CliError::config(format!("{}: {e}", args.events.display())))?;
    if events.is_empty() {
        return Err(CliError::config(format!("{}: no events", args.events.display())));
    }
    let dir = OutDir::open(out, force)?;
    let target = dir.file("cluster_model.json")?;

    let embeddings = match &args.embeddings {
        Some(p) => {
            io::require(p, "embeddings file")?;
            EmbeddingSet::read_jsonl(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => {
            let cache_dir = args.cache_dir.clone().unwrap_or_else(|| dir.input("cache"));
            let transport: Option<Arc<dyn Transport>> = if offline {
                None
            } else {
                Some(Arc::new(HttpTransport::new(Duration::from_secs(60))))
            };
            let gateway = Gateway::new(GatewayConfig::from_env(), transport, ResponseCache::open(cache_dir)?);
            let mut ids = Vec::with_capacity(events.len());
            let mut vectors = Vec::with_capacity(events.len());
            let mut fetched = 0;
            for ev in &events {
                let (v, cached) = gateway.embed_text(&ev.text, !offline)?;
                fetched += usize::from(!cached);
                ids.push(ev.id.clone());
                vectors.push(v);
            }
            info!("{} embeddings, {} fetched", events.len(), fetched);
            let set = EmbeddingSet::new(ids, vectors)?;
            fs::write(dir.file("embeddings.jsonl")?, set.to_jsonl())?;
            set
        }
    };
    if embeddings.is_empty() {
        return Err(CliError::config("no embeddings"));
    }
    let max_c = args.max_clusters.min(embeddings.len() - 1).max(2);
    let max_m = args.max_components.min(embeddings.dim()).max(1);
    let model = select_clustering(
        &events,
        &embeddings,
        1..=max_m,
        2..=max_c,
        args.seed,
        &SeverityLabelMap::default(),
    )?;
    println!(
        "components = {}, clusters = {}, silhouette = {:.4}",
        model.num_components, model.num_clusters, model.silhouette
    );
    io::write_json(&target, &model)?;
    Ok(())
}

pub fn group_traits(args: &GroupArgs, out: &Path, force: bool) -> Result<(), CliError> {
    let table = match (&args.ratios, &args.exposures) {
        (Some(p), _) => {
            io::require(p, "ratio table")?;
            ResponseRatioTable::read_csv(fs::File::open(p)?)
                .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        (None, Some(p)) => {
            io::require(p, "exposures file")?;
            let records = read_decision_log(fs::File::open(p)?)
                .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            ResponseRatioTable::from_outcomes(
                records
                    .iter()
                    .map(|r| (r.profile_bits, r.event_id.as_str(), r.decision)),
            )
        }
        (None, None) => return Err(CliError::config("group-traits needs --ratios or --exposures")),
    };
    if table.is_empty() {
        return Err(CliError::config("response ratio table is empty"));
    }
    let dir = OutDir::open(out, force)?;
    let target = dir.file("grouping.json")?;
    let grouping = tukey_grouping(&table.samples_by_profile(), args.alpha)
        .map_err(|e| CliError::config(e.to_string()))?;
    for g in &grouping.groups {
        println!("group {}: {} profiles, mean rate {:.4}", g.id, g.profiles.len(), g.mean_rate);
    }
    io::write_json(&target, &grouping)?;
    Ok(())
}
