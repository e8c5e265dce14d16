use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use heterodiff::corpus::{
    synth_corpus, tokenize, write_layouts_json, Corpus, CorpusFile, JsonCanvas, Layout,
    SynthSpec, Vocabulary,
};
use heterodiff::denoiser::{read_loss_csv, tokenize_all, Checkpoint, Denoiser, Trainer, LOG_HEADER};
use heterodiff::metrics::eval_report;
use heterodiff::rng::{derived, seeded};
use heterodiff::sampler::{generate_conditioned_types, generate_unconditional, refine, Generated};
use heterodiff::schedule::{cumulative_std_curve, CoordScheduleKind, Schedule};
use heterodiff::transition::{Block, TransitionSet};
use heterodiff::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::svg::{line_plot, render_layout, render_strip, Series};
use crate::trace::{frame, TraceFile, TraceSample};

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `count_prior[n - 1]`: frequency of `n` elements.
fn count_prior(layouts: &[Layout], n_max: usize) -> Vec<f64> {
    let mut prior = vec![0.0; n_max];
    for l in layouts {
        prior[l.len() - 1] += 1.0;
    }
    prior.iter_mut().for_each(|p| *p /= layouts.len() as f64);
    prior
}

pub fn synth(cfg: &RunConfig, n: usize, out: &Path) -> Result<()> {
    let p = &cfg.profile;
    let vocab = p.vocabulary()?;
    let corpus = synth_corpus(&SynthSpec::new(n, &vocab, p.n_max), p.train.seed)?;
    let all: Vec<Layout> = corpus.train.into_iter().chain(corpus.val).chain(corpus.test).collect();
    write_json(out, &write_layouts_json(&all, &vocab))?;
    eprintln!("wrote {} layouts to {}", all.len(), out.display());
    Ok(())
}

fn split(cfg: &RunConfig, input: &Path, vocab: &Vocabulary) -> Result<(Corpus, usize)> {
    let file = CorpusFile::read(input)?;
    let layouts = file.to_layouts(vocab, Some(cfg.profile.n_max))?;
    let dropped = file.layouts.len() - layouts.len();
    Ok((Corpus::from_layouts(layouts, cfg.profile.n_max, cfg.split_seed)?, dropped))
}

pub fn ingest(cfg: &RunConfig, input: &Path, out_dir: &Path) -> Result<()> {
    let vocab = cfg.profile.vocabulary()?;
    let (corpus, dropped) = split(cfg, input, &vocab)?;
    create_dir(out_dir)?;
    for (name, part) in [("train", &corpus.train), ("val", &corpus.val), ("test", &corpus.test)] {
        write_json(&out_dir.join(format!("{name}.json")), &write_layouts_json(part, &vocab))?;
    }
    let total = corpus.len() as f64;
    let pct = |n: usize| 100.0 * n as f64 / total;
    println!(
        "train {} ({:.1}%)  val {} ({:.1}%)  test {} ({:.1}%)  dropped {}",
        corpus.train.len(),
        pct(corpus.train.len()),
        corpus.val.len(),
        pct(corpus.val.len()),
        corpus.test.len(),
        pct(corpus.test.len()),
        dropped
    );
    Ok(())
}

/// Training layouts: a directory written by `ingest` contributes its
/// `train.json` as is; a corpus file is split first.
fn training_layouts(cfg: &RunConfig, path: &Path, vocab: &Vocabulary) -> Result<Vec<Layout>> {
    if path.is_dir() {
        let layouts = CorpusFile::read(&path.join("train.json"))?.to_layouts(vocab, Some(cfg.profile.n_max))?;
        if layouts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(layouts)
    } else {
        Ok(split(cfg, path, vocab)?.0.train)
    }
}

pub struct TrainArgs {
    pub corpus: Option<PathBuf>,
    pub out: PathBuf,
    pub log: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub steps: Option<u64>,
    pub save_every: Option<u64>,
    pub quiet: bool,
}

pub fn train(cfg: &RunConfig, args: &TrainArgs) -> Result<()> {
    let p = &cfg.profile;
    let mut trainer = match &args.resume {
        Some(path) => Trainer::<f32>::from_checkpoint(Checkpoint::read(path)?)?,
        None => {
            let vocab = p.vocabulary()?;
            let model = Denoiser::<f32>::new(p.denoiser_config(vocab), &mut derived(p.train.seed, 1))?;
            Trainer::new(model, p.train.clone(), p.schedule.clone(), cfg.transitions)?
        }
    };
    if let Some(steps) = args.steps {
        trainer.config.total_steps = steps;
    }
    let vocab = trainer.model.config().vocab.clone();
    let n_max = trainer.model.config().n_max;
    let corpus_path = args
        .corpus
        .clone()
        .or_else(|| cfg.corpus.clone())
        .ok_or_else(|| Error::Config("no corpus given (--corpus or \"corpus\" in the config)".into()))?;
    let layouts = training_layouts(cfg, &corpus_path, &vocab)?;
    if trainer.count_prior.is_none() {
        trainer.count_prior = Some(count_prior(&layouts, n_max));
    }
    let data = tokenize_all(&layouts, &vocab, n_max)?;
    let ts = TransitionSet::new(&Schedule::<f64>::new(trainer.schedule.clone())?, &vocab, trainer.transitions);

    let mut log = match &args.log {
        Some(path) => {
            let fresh = args.resume.is_none() || !path.exists();
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            let file = if fresh {
                File::create(path)
            } else {
                OpenOptions::new().append(true).open(path)
            }
            .map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            if fresh {
                writeln!(w, "{LOG_HEADER}").map_err(|e| Error::io(path, e))?;
            }
            Some((path.clone(), w))
        }
        None => None,
    };
    let total = trainer.config.total_steps;
    while trainer.model.step() < total {
        let rec = trainer.step(&data, &ts)?;
        if let Some((path, w)) = log.as_mut() {
            writeln!(w, "{}", rec.csv_row()).map_err(|e| Error::io(path.as_path(), e))?;
        }
        if !args.quiet && (rec.step % 100 == 0 || rec.step == total) {
            eprintln!("step {:>7}/{total}  loss {:.5}  lr {:.2e}", rec.step, rec.loss.total, rec.lr);
        }
        if args.save_every.is_some_and(|k| k > 0 && rec.step % k == 0 && rec.step < total) {
            trainer.save(&args.out)?;
        }
    }
    if let Some((path, mut w)) = log {
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    trainer.save(&args.out)?;
    eprintln!("saved checkpoint at step {} to {}", trainer.model.step(), args.out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Ugen,
    Gentype,
    Refine,
}

pub struct SampleArgs {
    pub checkpoint: PathBuf,
    pub mode: Mode,
    pub types: Vec<String>,
    pub input: Option<PathBuf>,
    pub n: Option<usize>,
    pub t_ugen: Option<usize>,
    pub t_gentype: Option<usize>,
    pub t_refine: Option<usize>,
    pub out: PathBuf,
    pub trace: Option<PathBuf>,
    pub greedy_final: bool,
    pub live_weights: bool,
}

pub fn sample(cfg: &RunConfig, args: &SampleArgs) -> Result<()> {
    let ck = Checkpoint::<f32>::read(&args.checkpoint)?;
    let vocab = ck.model.config().vocab.clone();
    let ts = TransitionSet::new(&Schedule::<f64>::new(ck.schedule.clone())?, &vocab, ck.transitions);
    let mut gen = cfg.profile.generation.clone();
    if let Some(n) = args.n {
        gen.samples = n;
    }
    if let Some(t) = args.t_ugen {
        gen.t_ugen = t;
    }
    if let Some(t) = args.t_gentype {
        gen.t_gentype = t;
    }
    if let Some(t) = args.t_refine {
        gen.t_refine = t;
    }
    gen.greedy_final |= args.greedy_final;
    gen.use_ema &= !args.live_weights;
    gen.validate(ts.total_steps())?;
    let trace = args.trace.is_some();
    let mut canvas = JsonCanvas { w: 1.0, h: 1.0 };

    let result: Generated = match args.mode {
        Mode::Ugen => {
            let prior = ck
                .count_prior
                .as_deref()
                .ok_or_else(|| Error::Checkpoint("no element-count prior stored; retrain with this tool".into()))?;
            generate_unconditional(&ck.model, prior, &ts, &gen, trace)?
        }
        Mode::Gentype => {
            if args.types.is_empty() {
                return Err(Error::Config("gentype needs --types".into()));
            }
            let ids = args
                .types
                .iter()
                .map(|n| vocab.type_id(n.trim()))
                .collect::<Result<Vec<_>>>()?;
            generate_conditioned_types(&ck.model, &vec![ids; gen.samples], &ts, &gen, trace)?
        }
        Mode::Refine => {
            let input = args
                .input
                .as_ref()
                .ok_or_else(|| Error::Config("refine needs --input".into()))?;
            let file = CorpusFile::read(input)?;
            canvas = file.canvas;
            refine(&ck.model, &file.to_layouts(&vocab, None)?, &ts, &gen, trace)?
        }
    };
    let mut out_file = write_layouts_json(&result.layouts, &vocab);
    out_file.canvas = canvas;
    write_json(&args.out, &out_file)?;
    if let Some(path) = &args.trace {
        // One frame per reverse step: the states x_{t-1} it produced.
        let samples = result
            .trajectories
            .iter()
            .enumerate()
            .map(|(index, tr)| TraceSample {
                index,
                types_resolved_at: tr.types_resolved_at,
                frames: tr.frames.iter().skip(1).map(|(t, s)| frame(*t, s, &vocab)).collect(),
            })
            .collect();
        write_json(path, &TraceFile { canvas, samples })?;
    }
    eprintln!(
        "wrote {} layouts to {} ({} retries)",
        result.layouts.len(),
        args.out.display(),
        result.retries
    );
    Ok(())
}

pub struct CorruptArgs {
    pub input: PathBuf,
    pub index: usize,
    pub out: PathBuf,
    pub intervals: usize,
    pub dump_matrices: Option<PathBuf>,
}

/// Frame times `round(T * j / intervals)` for `j = 0..=intervals`.
pub fn frame_times(total: usize, intervals: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = (0..=intervals)
        .map(|j| (total as f64 * j as f64 / intervals as f64).round() as usize)
        .collect();
    ts.dedup();
    ts
}

pub fn corrupt(cfg: &RunConfig, args: &CorruptArgs) -> Result<()> {
    let p = &cfg.profile;
    if args.intervals == 0 {
        return Err(Error::Config("--intervals must be positive".into()));
    }
    let vocab = p.vocabulary()?;
    let file = CorpusFile::read(&args.input)?;
    let layouts = file.to_layouts(&vocab, None)?;
    let layout = layouts.get(args.index).ok_or_else(|| {
        Error::Config(format!("--index {} out of range ({} layouts)", args.index, layouts.len()))
    })?;
    let ts = TransitionSet::new(&Schedule::<f64>::new(p.schedule.clone())?, &vocab, cfg.transitions);
    let total = ts.total_steps();
    let times = frame_times(total, args.intervals);
    let mut x = tokenize(layout, &vocab, p.n_max)?;
    let mut rng = seeded(p.train.seed);
    let mut frames = vec![frame(0, &x, &vocab)];
    for t in 1..=total {
        x = ts.step_sequence(&vocab, &x, t, &mut rng);
        if times.contains(&t) {
            frames.push(frame(t, &x, &vocab));
        }
    }
    write_json(
        &args.out,
        &TraceFile {
            canvas: file.canvas,
            samples: vec![TraceSample {
                index: args.index,
                types_resolved_at: None,
                frames,
            }],
        },
    )?;
    if let Some(dir) = &args.dump_matrices {
        create_dir(dir)?;
        for &t in times.iter().filter(|&&t| t > 0) {
            for (block, name) in [(Block::Coord, "coord"), (Block::Type, "type")] {
                write_file(&dir.join(format!("{name}_step_t{t:03}.csv")), ts.dump_csv(block, t, false).as_bytes())?;
                write_file(&dir.join(format!("{name}_cum_t{t:03}.csv")), ts.dump_csv(block, t, true).as_bytes())?;
            }
        }
    }
    eprintln!("wrote {} frames to {}", times.len(), args.out.display());
    Ok(())
}

/// Vocabulary of the configured types plus any others found in the files.
fn eval_vocab(cfg: &RunConfig, files: &[&CorpusFile]) -> Result<Vocabulary> {
    let mut names = cfg.profile.type_names.clone();
    for f in files {
        for n in f.type_names() {
            if !names.contains(&n) {
                names.push(n);
            }
        }
    }
    Vocabulary::new(cfg.profile.k, &names)
}

pub fn eval(cfg: &RunConfig, generated: &Path, reference: &Path, ignore: Option<&[String]>, out: Option<&Path>) -> Result<()> {
    let gen_file = CorpusFile::read(generated)?;
    let ref_file = CorpusFile::read(reference)?;
    let vocab = eval_vocab(cfg, &[&gen_file, &ref_file])?;
    let gen = gen_file.to_layouts(&vocab, None)?;
    let reference = ref_file.to_layouts(&vocab, None)?;
    if gen.is_empty() || reference.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let ignore = ignore.unwrap_or(&cfg.profile.overlap_ignore);
    let report = eval_report(&gen, &reference, &vocab, ignore);
    match out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

pub fn render(input: &Path, out_dir: &Path) -> Result<usize> {
    let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::MalformedCorpus(format!("line {}, column {}: {e}", e.line(), e.column())))?;
    create_dir(out_dir)?;
    let mut written = 0;
    if value.get("samples").is_some() {
        let trace: TraceFile = serde_json::from_value(value).map_err(|e| Error::MalformedCorpus(e.to_string()))?;
        for s in &trace.samples {
            for f in &s.frames {
                let name = format!("sample{:04}_t{:03}.svg", s.index, f.t);
                write_file(&out_dir.join(name), render_layout(&f.elements, &trace.canvas).as_bytes())?;
                written += 1;
            }
            let name = format!("sample{:04}_strip.svg", s.index);
            write_file(&out_dir.join(name), render_strip(&s.frames, &trace.canvas).as_bytes())?;
            written += 1;
        }
    } else {
        let file: CorpusFile = serde_json::from_value(value).map_err(|e| Error::MalformedCorpus(e.to_string()))?;
        for (i, l) in file.layouts.iter().enumerate() {
            let name = format!("layout{i:04}.svg");
            write_file(&out_dir.join(name), render_layout(&l.elements, &file.canvas).as_bytes())?;
            written += 1;
        }
    }
    eprintln!("wrote {written} SVG files to {}", out_dir.display());
    Ok(written)
}

pub fn plot_loss(log: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(log).map_err(|e| Error::io(log, e))?;
    let rows = read_loss_csv(&text)?;
    let series = Series {
        label: "total loss".into(),
        points: rows.iter().map(|&(s, l)| (s as f64, l)).collect(),
    };
    write_file(out, line_plot("Training loss", "step", "loss", &[series], true).as_bytes())
}

/// Entry std of the cumulative coordinate matrix for the configured
/// schedule and its linear counterpart.
pub fn plot_schedule(cfg: &RunConfig, out: &Path) -> Result<()> {
    let p = &cfg.profile;
    let mut linear = p.schedule.clone();
    linear.coord_kind = CoordScheduleKind::Linear;
    let mut series = Vec::new();
    for (label, params) in [("configured", &p.schedule), ("linear", &linear)] {
        let curve = cumulative_std_curve(params, p.k)?;
        series.push(Series {
            label: label.into(),
            points: curve.iter().enumerate().map(|(t, &s)| (t as f64, s)).collect(),
        });
    }
    write_file(out, line_plot("Std of cumulative coordinate matrix", "t", "std", &series, false).as_bytes())
}
