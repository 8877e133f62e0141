use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use unit_insight::abx::{abx_report, extract_items, AbxConfig};
use unit_insight::interpret::{build_contingency, majority_names, v_measure};
use unit_insight::io::{
    parse_deduped, parse_units, read_alignment, read_codebook, read_deduped, read_feats_dir, read_units, read_wav,
    write_codebook, write_deduped, write_units, write_wav,
};
use unit_insight::merge::{kwh_distance, merge_kh, merge_kk, merge_kwh, CrBounds, MergeMap, MergeMethod};
use unit_insight::quantizer::{deduplicate, kmeans_fit, pool_frames, quantize, KMeansConfig, Standardizer};
use unit_insight::redundancy::{circular_resynthesis, compare_passes, CircularConfig, CodebookEncoder, CrMatrix, SecondPass};
use unit_insight::synthetic::{generate, write_corpus, SyntheticConfig, SyntheticTruth};
use unit_insight::viz::{render_svg, tsne_embed, voronoi, PhoneFamilies, TsneConfig};
use unit_insight::vocoder::{lv_resynthesize, memorization_rate, LvItem, MemorizationReport, Resynthesis};
use unit_insight::{
    Codebook, DedupedSequence, Error, FeatureMatrix, LabelKind, Result, Unit, UnitSequence, Waveform,
};

use super::*;

type Out<'a> = &'a mut dyn Write;

fn emit(out: Out<'_>, name: &str, value: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{name}\t{value}").map_err(|e| Error::Io { path: PathBuf::from("<stdout>"), source: e })
}

fn parent(p: &Path) -> PathBuf {
    p.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// Deduplicated transcriptions from either a deduped or a frame-level unit file.
fn read_transcriptions(path: &Path) -> Result<Vec<(String, Vec<Unit>)>> {
    let text = read_text(path)?;
    let deduped = text.lines().any(|l| l.split_whitespace().next() == Some("D"));
    let seqs: Vec<DedupedSequence> = if deduped {
        parse_deduped(&text, path)?
    } else {
        parse_units(&text, path)?.iter().map(deduplicate).collect()
    };
    Ok(seqs.into_iter().map(|d| (d.utterance_id().to_string(), d.units().to_vec())).collect())
}

fn vocabulary<'a>(seqs: impl IntoIterator<Item = &'a [Unit]>) -> usize {
    seqs.into_iter().flatten().max().map_or(0, |&m| m as usize + 1)
}

fn frame_counts(zs: &[UnitSequence]) -> BTreeMap<String, usize> {
    zs.iter().map(|z| (z.utterance_id.clone(), z.len())).collect()
}

/// Reorders `items` to follow `ids`, failing on any missing utterance.
fn align_to<T: Clone>(ids: &[&str], items: &[T], id_of: impl Fn(&T) -> &str, what: &str) -> Result<Vec<T>> {
    let by_id: BTreeMap<&str, &T> = items.iter().map(|x| (id_of(x), x)).collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id)
                .map(|x| (*x).clone())
                .ok_or_else(|| Error::Invalid(format!("no {what} for utterance {id}")))
        })
        .collect()
}

/// Output files whose parent directories must exist before the command runs.
fn output_files(c: &Command) -> Vec<&Path> {
    let mut v: Vec<&Path> = match c {
        Command::KmeansTrain(a) => vec![&a.out],
        Command::Quantize(a) => vec![&a.out],
        Command::Dedup(a) => vec![&a.out],
        Command::Viz(a) => vec![&a.out],
        Command::LvResynth(a) => vec![&a.report],
        Command::Cr(a) => vec![&a.out],
        Command::Merge(a) => vec![&a.out, &a.map],
        Command::Vmeasure(_) | Command::Ued(_) | Command::Abx(_) | Command::GenSynthetic(_) => Vec::new(),
    };
    match c {
        Command::Viz(a) => v.extend(a.embedding.as_deref()),
        Command::LvResynth(a) => v.extend(a.pass2_units.as_deref()),
        _ => {}
    }
    v
}

pub fn dispatch(cli: &Cli, out: Out<'_>) -> Result<()> {
    for f in output_files(&cli.command) {
        let dir = parent(f);
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        }
    }
    let outputs = match &cli.command {
        Command::KmeansTrain(a) => kmeans_train(a, out)?,
        Command::Quantize(a) => quantize_cmd(a, out)?,
        Command::Dedup(a) => dedup(a, out)?,
        Command::Vmeasure(a) => vmeasure(a, out)?,
        Command::Viz(a) => viz(a, out)?,
        Command::LvResynth(a) => lv_resynth(a, out)?,
        Command::Ued(a) => ued_cmd(a, out)?,
        Command::Cr(a) => cr(a, out)?,
        Command::Merge(a) => merge(a, out)?,
        Command::Abx(a) => abx(a, out)?,
        Command::GenSynthetic(a) => gen_synthetic(a, out)?,
    };
    let dirs: BTreeSet<PathBuf> = outputs.into_iter().collect();
    for d in dirs {
        echo_config(cli, &d)?;
    }
    Ok(())
}

fn standardizer_path(codebook: &Path) -> PathBuf {
    let mut s = codebook.as_os_str().to_owned();
    s.push(".standardizer.json");
    PathBuf::from(s)
}

fn kmeans_train(a: &KmeansTrainArgs, out: Out<'_>) -> Result<Vec<PathBuf>> {
    let mats = read_feats_dir(&a.feats)?;
    let (mut points, dim) = pool_frames(&mats)?;
    let scaler = a.standardize.then(|| Standardizer::fit(&points, dim));
    if let Some(s) = &scaler {
        points = s.apply(&points);
    }
    let cfg = KMeansConfig { k: a.k, max_iters: a.max_iters, tol: a.tol, seed: a.seed };
    let cb = kmeans_fit(&points, dim, &cfg)?;
    write_codebook(&cb, &a.out)?;
    if let Some(s) = &scaler {
        let text = serde_json::to_string_pretty(s).expect("standardizer serializes") + "\n";
        write_text(&standardizer_path(&a.out), &text)?;
    }
    let used = cb.counts().iter().filter(|&&c| c > 0).count();
    emit(out, "k", cb.k())?;
    emit(out, "dim", dim)?;
    emit(out, "frames", points.len() / dim)?;
    emit(out, "occupied_units", used)?;
    Ok(vec![parent(&a.out)])
}

fn quantize_cmd(a: &QuantizeArgs, out: Out<'_>) -> Result<Vec<PathBuf>> {
    let mats = read_feats_dir(&a.feats)?;
    let cb = read_codebook(&a.codebook)?;
    let mats = match &a.standardizer {
        Some(p) => {
            let s: Standardizer = serde_json::from_str(&read_text(p)?)
                .map_err(|e| Error::Parse { path: p.clone(), line: e.line(), msg: e.to_string() })?;
            if s.mean.len() != cb.dim() {
                return Err(Error::DimensionMismatch { expected: cb.dim(), got: s.mean.len() });
            }
            if let Some(m) = mats.iter().find(|m| m.dim() != s.mean.len()) {
                return Err(Error::DimensionMismatch { expected: s.mean.len(), got: m.dim() });
            }
            mats.iter()
                .map(|m| FeatureMatrix::new(m.utterance_id(), m.frame_rate_hz(), m.dim(), s.apply(m.data())))
                .collect::<Result<Vec<_>>>()?
        }
        None => mats,
    };
    let mut zs: Vec<UnitSequence> = mats.par_iter().map(|m| quantize(m, &cb)).collect::<Result<_>>()?;
    if let Some(p) = &a.map {
        let map = MergeMap::read_tsv(p)?;
        if map.source_k() != cb.k() {
            return Err(Error::Invalid(format!(
                "merge map covers {} units, codebook has {}",
                map.source_k(),
                cb.k()
            )));
        }
        zs = unit_insight::merge::relabel_units(&zs, &map)?;
    }
    write_units(&zs, &a.out)?;
    emit(out, "utterances", zs.len())?;
    emit(out, "frames", zs.iter().map(UnitSequence::len).sum::<usize>())?;
    Ok(vec![parent(&a.out)])
}

fn dedup(a: &DedupArgs, out: Out<'_>) -> Result<Vec<PathBuf>> {
    let zs = read_units(&a.units)?;
    let ds: Vec<DedupedSequence> = zs.iter().map(deduplicate).collect();
    write_deduped(&ds, &a.out)?;
    emit(out, "utterances", ds.len())?;
    emit(out, "frames", zs.iter().map(UnitSequence::len).sum::<usize>())?;
    emit(out, "runs", ds.iter().map(DedupedSequence::len).sum::<usize>())?;
    Ok(vec![parent(&a.out)])
}

fn vmeasure(a: &VmeasureArgs, out: Out<'_>) -> Result<Vec<PathBuf>> {
    let zs = read_units(&a.units)?;
    let labels = read_alignment(&a.alignment, a.kind.into(), Some(&frame_counts(&zs)))?;
    let k = a.k.unwrap_or_else(|| vocabulary(zs.iter().map(|z| z.units.as_slice())));
    let table = build_contingency(&zs, &labels, k, a.exclude_sil)?;
    let v = v_measure(&table)?;
    emit(out, "homogeneity", format!("{:.2}", v.homogeneity))?;
    emit(out, "completeness", format!("{:.2}", v.completeness))?;
    emit(out, "v", format!("{:.2}", v.v))?;
    Ok(Vec::new())
}

fn viz(a: &VizArgs, out: Out<'_>) -> Result<Vec<PathBuf>> {
    let cb = read_codebook(&a.codebook)?;
    let zs = read_units(&a.units)?;
    let labels = read_alignment(&a.alignment, LabelKind::Phoneme, Some(&frame_counts(&zs)))?;
    let table = build_contingency(&zs, &labels, cb.k(), false)?;
    let names: BTreeMap<Unit, String> =
        majority_names(&table).into_iter().enumerate().map(|(u, n)| (u as Unit, n)).collect();
    let families = match &a.families {
        Some(p) => PhoneFamilies::from_tsv(&read_text(p)?)?,
        None => PhoneFamilies::timit(),
    };
    let cfg = TsneConfig { perplexity: a.perplexity, iters: a.iters, seed: a.seed, metric: a.metric.into() };
    let emb = tsne_embed(&cb, &cfg)?;
    let diagram = voronoi(&emb.points, a.margin, a.seed)?;
    render_svg(&diagram, &names, &families, &a.out)?;
    let mut dirs = vec![parent(&a.out)];
    if let Some(p) = &a.embedding {
        let mut text = String::from("unit\tx\ty\tlabel\n");
        for (u, pt) in emb.points.iter().enumerate() {
            text.push_str(&format!("{u}\t{}\t{}\t{}\n", pt[0], pt[1], names[&(u as Unit)]));
        }
        write_text(p, &text)?;
        dirs.push(parent(p));
    }
    emit(out, "units", cb.k())?;
    emit(out, "perplexity", emb.perplexity)?;
    emit(out, "final_kl", format!("{:.6}", emb.final_kl))?;
    Ok(dirs)
}

fn write_resynthesis(
    dir: &Path,
    resynth: &[Resynthesis],
    report: &MemorizationReport,
    report_path: &Path,
    pooled: bool,
) -> Result<f64> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    for r in resynth {
        write_wav(&r.waveform, &dir.join(format!("{}.wav", r.waveform.utterance_id)))?;
    }
    write_text(report_path, &report.to_tsv(pooled)?)?;
    if pooled {
        report.pooled_rate()
    } else {
        memorization_rate(report)
    }
}

fn lv_resynth(a: &LvResynthArgs, out: Out<'_>) -> Result<Vec<PathBuf>> {
    let deduped = read_deduped(&a.units)?;
    let ids: Vec<&str> = deduped.iter().map(DedupedSequence::utterance_id).collect();
    let waves: Vec<Waveform> = ids
        .iter()
        .map(|id| read_wav(&a.wav_dir.join(format!("{id}.wav")), *id))
        .collect::<Result<_>>()?;
    let mut dirs = vec![a.out_dir.clone(), parent(&a.report)];

    let (Some(truth), Some(feats), Some(cb_path), Some(pass2_path)) =
        (&a.synthetic_truth, &a.feats, &a.codebook, &a.pass2_units)
    else {
        let k = vocabulary(deduped.iter().map(DedupedSequence::units));
        let items: Vec<LvItem> = deduped.iter().zip(&waves).map(|(units, wave)| LvItem { units, wave }).collect();
        let (resynth, report, table) = lv_resynthesize(&items, a.frame_rate, a.key.into(), k, a.seed)?;
        let rate = write_resynthesis(&a.out_dir, &resynth, &report, &a.report, a.pooled)?;
        emit(out, "utterances", resynth.len())?;
        emit(out, "table_entries", table.len())?;
        emit(out, "unseen_percent", format!("{rate:.2}"))?;
        return Ok(dirs);
    };

    let truth = SyntheticTruth::read_json(truth)?;
    let cb = read_codebook(cb_path)?;
    let features = align_to(&ids, &read_feats_dir(feats)?, |m| m.utterance_id(), "features")?;
    let cfg = CircularConfig { kind: a.key.into(), fill_seed: a.seed, ..CircularConfig::default() };
    let report = circular_resynthesis(
        &features,
        &waves,
        &CodebookEncoder::new(&cb),
        SecondPass::Synthetic(&truth.reencoder),
        &cfg,
    )?;
    if report.pass1 != deduped {
        return Err(Error::Invalid(format!(
            "{} does not match the codebook's quantization of {}",
            a.units.display(),
            feats.display()
        )));
    }
    let rate = write_resynthesis(&a.out_dir, &report.resynthesized, &report.memorization, &a.report, a.pooled)?;
    write_deduped(&report.pass2, pass2_path)?;
    dirs.push(parent(pass2_path));
    emit(out, "utterances", report.resynthesized.len())?;
    emit(out, "unseen_percent", format!("{rate:.2}"))?;
    emit(out, "ued_mean", format!("{:.2}", report.mean_ued()))?;
    Ok(dirs)
}

fn ued_cmd(a: &UedArgs, out: Out<'_>) -> Result<Vec<PathBuf>> {
    let p1 = read_transcriptions(&a.a)?;
    let p2 = read_transcriptions(&a.b)?;
    let k = vocabulary(p1.iter().chain(&p2).map(|(_, u)| u.as_slice()));
    let (summary, _) = compare_passes(&p1, &p2, k, Default::default())?;
    for (id, v) in &summary.per_utterance {
        emit(out, id, format!("{v:.2}"))?;
    }
    emit(out, "mean", format!("{:.2}", summary.mean))?;
    Ok(Vec::new())
}

fn cr(a: &CrArgs, out: Out<'_>) -> Result<Vec<PathBuf>> {
    let p1 = read_transcriptions(&a.units_pass1)?;
    let p2 = read_transcriptions(&a.units_pass2)?;
    let (summary, m) = compare_passes(&p1, &p2, a.k, a.normalization.into())?;
    m.write_tsv(&a.out)?;
    let max = m.rates().iter().copied().fold(0.0, f64::max);
    emit(out, "utterances", summary.per_utterance.len())?;
    emit(out, "ued_mean", format!("{:.2}", summary.mean))?;
    emit(out, "max_swap_rate", format!("{max:.4}"))?;
    Ok(vec![parent(&a.out)])
}

fn merge(a: &MergeArgs, out: Out<'_>) -> Result<Vec<PathBuf>> {
    let cb: Codebook = read_codebook(&a.codebook)?;
    let method: MergeMethod = a.method.into();
    let merged = match method {
        MergeMethod::KK => merge_kk(&cb, a.target, a.seed, a.weighted)?,
        MergeMethod::KH => merge_kh(&cb, a.target)?,
        MergeMethod::KWH => {
            let path = a.cr.as_ref().ok_or_else(|| Error::Invalid("kwh needs --cr".into()))?;
            let m = CrMatrix::read_tsv(path)?;
            let bounds = if a.clamp_cr { CrBounds::Clamp } else { CrBounds::Reject };
            let (_, clamped) = kwh_distance(&cb, &m, bounds)?;
            if clamped > 0 {
                log::warn!("clamped {clamped} CR averages into [0, 1]");
            }
            merge_kwh(&cb, &m, a.target, bounds)?
        }
    };
    write_codebook(&merged.codebook, &a.out)?;
    merged.map.write_tsv(&a.map)?;
    emit(out, "source_k", merged.map.source_k())?;
    emit(out, "target_k", merged.map.target_k())?;
    emit(out, "method", method)?;
    Ok(vec![parent(&a.out), parent(&a.map)])
}

fn abx(a: &AbxArgs, out: Out<'_>) -> Result<Vec<PathBuf>> {
    let zs = read_units(&a.units)?;
    let cb = read_codebook(&a.codebook)?;
    let lengths = frame_counts(&zs);
    let phones = read_alignment(&a.phones, LabelKind::Phoneme, Some(&lengths))?;
    let speakers = read_alignment(&a.speakers, LabelKind::Speaker, Some(&lengths))?;
    let items = extract_items(&phones, &speakers)?;
    let cfg = AbxConfig { mode: a.mode.into(), max_triples: a.max_triples, seed: a.seed, deduplicated: a.deduped };
    let report = abx_report(&items.items, &zs, &cb, &cfg)?;
    let name = match a.mode {
        ModeArg::Within => "abx_within",
        ModeArg::Across => "abx_across",
    };
    emit(out, name, format!("{:.2}", report.score))?;
    emit(out, "cells", report.cells.len())?;
    emit(out, "triples", report.triples)?;
    Ok(Vec::new())
}

fn gen_synthetic(a: &GenSyntheticArgs, out: Out<'_>) -> Result<Vec<PathBuf>> {
    let cfg = SyntheticConfig {
        phones: a.phones,
        dim: a.dim,
        utterances: a.utterances,
        runs: a.runs,
        speakers: a.speakers,
        blob_sigma: a.blob_sigma,
        speaker_shift: a.speaker_shift,
        swap_pairs: a.swap_pairs,
        swap_probability: a.swap_probability,
        reencode_noise: a.reencode_noise,
        seed: a.seed,
        ..SyntheticConfig::default()
    };
    let corpus = generate(&cfg)?;
    for (name, n) in write_corpus(&corpus, &a.out)? {
        emit(out, name, n)?;
    }
    Ok(vec![a.out.clone()])
}
