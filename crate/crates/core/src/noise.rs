//! Jump-adapted, refinement-coupled driving noise for one Monte Carlo run.
//!
//! A realization holds, for every particle, the Brownian increment and
//! time integral `J = ∫(w_s − w_a) ds` over each cell of the finest grid,
//! the system's jump events, and exact conditional refinements of the
//! cells that contain jump times. Coarser resolutions are obtained by
//! pairwise aggregation, so the increment over a coarse step is by
//! definition the sum of the two finer ones beneath it.

use std::io::{Read, Write};

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::config::{InitialLaw, RunConfig};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::MarkMeasure;
use crate::seed::{SeedSequence, Stream};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// One atom of the system's Poisson random measures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub particle: usize,
    /// Index of the mark atom.
    pub mark: usize,
}

/// Shape of a realization.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub particles: usize,
    pub state_dim: usize,
    pub noise_dim: usize,
    pub horizon: f64,
    pub n_max: usize,
    /// Refine every path at every system jump time, not only at the
    /// particle's own jumps. Needed when the diffusion or jump coefficient
    /// reads the measure.
    pub split_all: bool,
    pub initial: InitialLaw,
}

impl NoiseSpec {
    pub fn from_run(
        cfg: &RunConfig,
        state_dim: usize,
        noise_dim: usize,
        n_max: usize,
        split_all: bool,
    ) -> Self {
        Self {
            particles: cfg.particles,
            state_dim,
            noise_dim,
            horizon: cfg.grid.horizon(),
            n_max,
            split_all,
            initial: cfg.initial,
        }
    }

    fn validate(&self) -> Result<Grid> {
        if self.particles == 0 || self.state_dim == 0 || self.noise_dim == 0 {
            return Err(Error::domain(
                "particle count and dimensions must be positive",
            ));
        }
        Grid::new(self.horizon, self.n_max)
    }
}

/// Interior split points of one fine cell of one path, with the pieces
/// between them.
#[derive(Debug, Clone, PartialEq)]
struct CellSplit {
    cell: usize,
    times: Vec<f64>,
    dw: Vec<f64>,
    jj: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    spec: NoiseSpec,
    run: usize,
    grid: Grid,
    dw: Vec<f64>,
    jj: Vec<f64>,
    jumps: Vec<JumpEvent>,
    own_partial: Vec<f64>,
    splits: Vec<Vec<CellSplit>>,
    initial: Vec<f64>,
}

/// Exact joint draw of `(Δw, J)` over an interval of length `h`.
#[inline]
fn gaussian_pair(rng: &mut ChaCha8Rng, h: f64) -> (f64, f64) {
    let z1: f64 = StandardNormal.sample(rng);
    let z2: f64 = StandardNormal.sample(rng);
    let sh = h.sqrt();
    (sh * z1, h * sh * (0.5 * z1 + z2 / (2.0 * SQRT3)))
}

/// Splits an interval of length `u + v` with totals `(d, j)` at `u`,
/// sampling the left piece from its exact conditional law. Returns
/// `(Δw₁, J₁, Δw₂, J₂)`; the right piece is fixed by the totals.
fn split_pair(rng: &mut ChaCha8Rng, u: f64, v: f64, d: f64, j: f64) -> (f64, f64, f64, f64) {
    let (x1, j1) = gaussian_pair(rng, u);
    let (x2, j2) = gaussian_pair(rng, v);
    let r0 = d - (x1 + x2);
    let r1 = j - (j1 + j2 + x1 * v);
    let l = u + v;
    let s0 = 4.0 / l * r0 - 6.0 / (l * l) * r1;
    let s1 = -6.0 / (l * l) * r0 + 12.0 / (l * l * l) * r1;
    let x1 = x1 + u * s0 + (v * u + 0.5 * u * u) * s1;
    let j1 = j1 + 0.5 * u * u * s0 + (0.5 * v * u * u + u * u * u / 3.0) * s1;
    (x1, j1, d - x1, j - j1 - x1 * v)
}

/// Fine cell `c` with `t_c < τ ≤ t_{c+1}`: a time on the grid belongs to
/// the interval on its left.
pub(crate) fn cell_of(grid: &Grid, tau: f64) -> usize {
    let c = grid.interval_index(tau).unwrap_or(grid.steps() - 1);
    if c > 0 && grid.point(c) == tau {
        c - 1
    } else {
        c
    }
}

fn draw_jump_times(
    spec: &NoiseSpec,
    marks: &MarkMeasure,
    seeds: &SeedSequence,
    run: usize,
) -> Result<Vec<JumpEvent>> {
    let lambda = marks.total_intensity();
    let mut events = Vec::new();
    if marks.is_empty() || lambda == 0.0 {
        return Ok(events);
    }
    let exp = Exp::new(lambda).map_err(|e| Error::domain(e.to_string()))?;
    let pick = WeightedIndex::new(marks.weights()).map_err(|e| Error::domain(e.to_string()))?;
    let t_end = spec.horizon;
    for i in 0..spec.particles {
        let mut rng = seeds.rng(run, i, Stream::Jumps);
        let mut t = 0.0;
        loop {
            t += exp.sample(&mut rng);
            if t > t_end {
                break;
            }
            let mark = pick.sample(&mut rng);
            events.push(JumpEvent {
                time: t,
                particle: i,
                mark,
            });
        }
    }
    sort_events(&mut events);

    // Coincident times have probability zero; redraw deterministically.
    let mut ties: Vec<Option<ChaCha8Rng>> = vec![None; spec.particles];
    loop {
        let mut changed = false;
        for e in 0..events.len() {
            let clash = events[e].time <= 0.0 || (e > 0 && events[e].time == events[e - 1].time);
            if clash {
                let p = events[e].particle;
                let rng = ties[p].get_or_insert_with(|| seeds.rng(run, p, Stream::Ties));
                let u: f64 = rng.random();
                events[e].time = t_end * (1.0 - u);
                changed = true;
            }
        }
        if !changed {
            break;
        }
        sort_events(&mut events);
    }
    Ok(events)
}

fn sort_events(events: &mut [JumpEvent]) {
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.particle.cmp(&b.particle)));
}

/// Draws the full realization for run `run`. Every stream is a function of
/// `(seed, run, particle)` only, so particle `i` sees the same Brownian
/// path and the same jump clock in every system size.
pub fn sample_realization(
    spec: &NoiseSpec,
    marks: &MarkMeasure,
    seeds: &SeedSequence,
    run: usize,
) -> Result<NoiseRealization> {
    let grid = spec.validate()?;
    let (np, m, d, nmax) = (spec.particles, spec.noise_dim, spec.state_dim, spec.n_max);
    let h = grid.step_size();

    let mut initial = vec![0.0; np * d];
    for (i, x) in initial.chunks_exact_mut(d).enumerate() {
        let mut rng = seeds.rng(run, i, Stream::Initial);
        for v in x.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = spec.initial.mean + spec.initial.sd * z;
        }
    }

    let mut dw = vec![0.0; np * nmax * m];
    let mut jj = vec![0.0; np * nmax * m];
    for i in 0..np {
        let mut rng = seeds.rng(run, i, Stream::Brownian);
        let base = i * nmax * m;
        for k in base..base + nmax * m {
            let (a, b) = gaussian_pair(&mut rng, h);
            dw[k] = a;
            jj[k] = b;
        }
    }

    let jumps = draw_jump_times(spec, marks, seeds, run)?;
    let mut real = NoiseRealization {
        spec: spec.clone(),
        run,
        grid,
        dw,
        jj,
        own_partial: vec![0.0; jumps.len() * m],
        jumps,
        splits: vec![Vec::new(); np],
        initial,
    };

    let mut own: Vec<Vec<usize>> = vec![Vec::new(); np];
    for (e, ev) in real.jumps.iter().enumerate() {
        own[ev.particle].push(e);
    }
    let mut buf = vec![0.0; m];
    for (i, events) in own.iter().enumerate() {
        if events.is_empty() {
            continue;
        }
        let mut rng = seeds.rng(run, i, Stream::OwnSplits);
        for &e in events {
            let tau = real.jumps[e].time;
            real.split_at(i, tau, &mut rng);
            real.partial(i, tau, &mut buf);
            real.own_partial[e * m..(e + 1) * m].copy_from_slice(&buf);
        }
    }
    if spec.split_all && !real.jumps.is_empty() {
        for i in 0..np {
            let mut rng = seeds.rng(run, i, Stream::OtherSplits);
            for e in 0..real.jumps.len() {
                if real.jumps[e].particle != i {
                    let tau = real.jumps[e].time;
                    real.split_at(i, tau, &mut rng);
                }
            }
        }
    }
    Ok(real)
}

impl NoiseRealization {
    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn run(&self) -> usize {
        self.run
    }

    pub fn particles(&self) -> usize {
        self.spec.particles
    }

    pub fn noise_dim(&self) -> usize {
        self.spec.noise_dim
    }

    pub fn n_max(&self) -> usize {
        self.spec.n_max
    }

    pub fn fine_grid(&self) -> &Grid {
        &self.grid
    }

    pub fn jumps(&self) -> &[JumpEvent] {
        &self.jumps
    }

    /// Initial states, `N × d` row-major.
    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Fine-cell increment of particle `i` over cell `c`.
    pub fn fine_dw(&self, i: usize, c: usize) -> &[f64] {
        let m = self.spec.noise_dim;
        let k = (i * self.spec.n_max + c) * m;
        &self.dw[k..k + m]
    }

    pub fn fine_time_integral(&self, i: usize, c: usize) -> &[f64] {
        let m = self.spec.noise_dim;
        let k = (i * self.spec.n_max + c) * m;
        &self.jj[k..k + m]
    }

    /// Sub-interval boundaries inside fine cell `c` of path `i`, if any.
    pub fn split_times(&self, i: usize, c: usize) -> &[f64] {
        match self.find_split(i, c) {
            Ok(k) => &self.splits[i][k].times,
            Err(_) => &[],
        }
    }

    /// Increments over the sub-intervals of cell `c` of path `i` (one per
    /// sub-interval, `m` values each).
    pub fn split_pieces(&self, i: usize, c: usize) -> Option<(&[f64], &[f64])> {
        self.find_split(i, c)
            .ok()
            .map(|k| (&self.splits[i][k].dw[..], &self.splits[i][k].jj[..]))
    }

    /// The jump-adapted union grid as seen by path `i`: every fine grid
    /// point together with every refinement point of that path.
    pub fn union_points(&self, i: usize) -> Vec<f64> {
        let mut pts = Vec::with_capacity(self.spec.n_max + 1);
        let mut splits = self.splits[i].iter().peekable();
        for c in 0..self.spec.n_max {
            pts.push(self.grid.point(c));
            if let Some(s) = splits.next_if(|s| s.cell == c) {
                pts.extend_from_slice(&s.times);
            }
        }
        pts.push(self.grid.horizon());
        pts
    }

    fn find_split(&self, i: usize, c: usize) -> std::result::Result<usize, usize> {
        self.splits[i].binary_search_by_key(&c, |s| s.cell)
    }

    fn split_at(&mut self, i: usize, tau: f64, rng: &mut ChaCha8Rng) {
        let c = cell_of(&self.grid, tau);
        let (a, b) = (self.grid.point(c), self.grid.point(c + 1));
        if tau >= b {
            return;
        }
        let m = self.spec.noise_dim;
        let slot = match self.find_split(i, c) {
            Ok(k) => k,
            Err(k) => {
                let base = (i * self.spec.n_max + c) * m;
                self.splits[i].insert(
                    k,
                    CellSplit {
                        cell: c,
                        times: Vec::new(),
                        dw: self.dw[base..base + m].to_vec(),
                        jj: self.jj[base..base + m].to_vec(),
                    },
                );
                k
            }
        };
        let split = &mut self.splits[i][slot];
        let p = split.times.partition_point(|&t| t < tau);
        if p < split.times.len() && split.times[p] == tau {
            return;
        }
        let left = if p == 0 { a } else { split.times[p - 1] };
        let right = if p == split.times.len() {
            b
        } else {
            split.times[p]
        };
        let (u, v) = (tau - left, right - tau);
        let mut new_dw = vec![0.0; 2 * m];
        let mut new_jj = vec![0.0; 2 * m];
        for l in 0..m {
            let (x1, j1, x2, j2) = split_pair(rng, u, v, split.dw[p * m + l], split.jj[p * m + l]);
            new_dw[l] = x1;
            new_jj[l] = j1;
            new_dw[m + l] = x2;
            new_jj[m + l] = j2;
        }
        split.times.insert(p, tau);
        split.dw.splice(p * m..(p + 1) * m, new_dw);
        split.jj.splice(p * m..(p + 1) * m, new_jj);
    }

    /// `w_τ − w_{t_c}` for the cell `c` containing `τ`.
    fn partial(&self, i: usize, tau: f64, out: &mut [f64]) {
        let c = cell_of(&self.grid, tau);
        if tau >= self.grid.point(c + 1) {
            out.copy_from_slice(self.fine_dw(i, c));
            return;
        }
        let m = self.spec.noise_dim;
        let split = self
            .find_split(i, c)
            .map(|k| &self.splits[i][k])
            .unwrap_or_else(|_| panic!("path {i} is not refined at time {tau}"));
        let p = split.times.partition_point(|&t| t < tau);
        assert!(
            p < split.times.len() && split.times[p] == tau,
            "path {i} is not refined at time {tau}"
        );
        out.fill(0.0);
        for piece in 0..=p {
            for l in 0..m {
                out[l] += split.dw[piece * m + l];
            }
        }
    }

    /// Writes a versioned little-endian binary image.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        fn u(w: &mut impl Write, v: u64) -> std::io::Result<()> {
            w.write_all(&v.to_le_bytes())
        }
        fn f(w: &mut impl Write, v: f64) -> std::io::Result<()> {
            w.write_all(&v.to_le_bytes())
        }
        fn fs(w: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
            u(w, v.len() as u64)?;
            v.iter().try_for_each(|x| f(w, *x))
        }
        w.write_all(DUMP_MAGIC)?;
        u(&mut w, DUMP_VERSION)?;
        let s = &self.spec;
        for v in [
            s.particles,
            s.state_dim,
            s.noise_dim,
            s.n_max,
            s.split_all as usize,
            self.run,
        ] {
            u(&mut w, v as u64)?;
        }
        f(&mut w, s.horizon)?;
        f(&mut w, s.initial.mean)?;
        f(&mut w, s.initial.sd)?;
        fs(&mut w, &self.initial)?;
        fs(&mut w, &self.dw)?;
        fs(&mut w, &self.jj)?;
        u(&mut w, self.jumps.len() as u64)?;
        for e in &self.jumps {
            f(&mut w, e.time)?;
            u(&mut w, e.particle as u64)?;
            u(&mut w, e.mark as u64)?;
        }
        fs(&mut w, &self.own_partial)?;
        for path in &self.splits {
            u(&mut w, path.len() as u64)?;
            for c in path {
                u(&mut w, c.cell as u64)?;
                fs(&mut w, &c.times)?;
                fs(&mut w, &c.dw)?;
                fs(&mut w, &c.jj)?;
            }
        }
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        fn u(r: &mut impl Read) -> std::io::Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        }
        fn f(r: &mut impl Read) -> std::io::Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        }
        fn fs(r: &mut impl Read) -> std::io::Result<Vec<f64>> {
            let n = u(r)? as usize;
            (0..n).map(|_| f(r)).collect()
        }
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::domain("not a noise realization dump"));
        }
        let version = u(&mut r)?;
        if version != DUMP_VERSION {
            return Err(Error::domain(format!("unsupported dump version {version}")));
        }
        let mut hdr = [0usize; 6];
        for h in hdr.iter_mut() {
            *h = u(&mut r)? as usize;
        }
        let horizon = f(&mut r)?;
        let initial_law = InitialLaw {
            mean: f(&mut r)?,
            sd: f(&mut r)?,
        };
        let spec = NoiseSpec {
            particles: hdr[0],
            state_dim: hdr[1],
            noise_dim: hdr[2],
            n_max: hdr[3],
            split_all: hdr[4] != 0,
            horizon,
            initial: initial_law,
        };
        let grid = spec.validate()?;
        let initial = fs(&mut r)?;
        let dw = fs(&mut r)?;
        let jj = fs(&mut r)?;
        let n_jumps = u(&mut r)? as usize;
        let mut jumps = Vec::with_capacity(n_jumps);
        for _ in 0..n_jumps {
            jumps.push(JumpEvent {
                time: f(&mut r)?,
                particle: u(&mut r)? as usize,
                mark: u(&mut r)? as usize,
            });
        }
        let own_partial = fs(&mut r)?;
        let mut splits = Vec::with_capacity(spec.particles);
        for _ in 0..spec.particles {
            let n = u(&mut r)? as usize;
            let mut path = Vec::with_capacity(n);
            for _ in 0..n {
                path.push(CellSplit {
                    cell: u(&mut r)? as usize,
                    times: fs(&mut r)?,
                    dw: fs(&mut r)?,
                    jj: fs(&mut r)?,
                });
            }
            splits.push(path);
        }
        let cells = spec.particles * spec.n_max * spec.noise_dim;
        if dw.len() != cells
            || jj.len() != cells
            || initial.len() != spec.particles * spec.state_dim
        {
            return Err(Error::domain("dump arrays do not match the header"));
        }
        Ok(Self {
            spec,
            run: hdr[5],
            grid,
            dw,
            jj,
            jumps,
            own_partial,
            splits,
            initial,
        })
    }
}

const DUMP_MAGIC: &[u8; 8] = b"MKVNOISE";
const DUMP_VERSION: u64 = 1;

/// Pairwise aggregation of adjacent cells; `len_r` is the length of the
/// right cell.
#[inline]
fn combine(dw_l: f64, j_l: f64, dw_r: f64, j_r: f64, len_r: f64) -> (f64, f64) {
    (dw_l + dw_r, j_l + j_r + dw_l * len_r)
}

/// A realization viewed at resolution `n`.
#[derive(Debug, Clone)]
pub struct ResolutionView<'a> {
    real: &'a NoiseRealization,
    grid: Grid,
    ratio: usize,
    dw: Vec<f64>,
    jj: Vec<f64>,
    substeps: usize,
    sub_dw: Vec<f64>,
    jump_start: Vec<usize>,
}

/// Views `real` at `target_n` steps with no substep data.
pub fn coarsen(real: &NoiseRealization, target_n: usize) -> Result<ResolutionView<'_>> {
    ResolutionView::new(real, target_n, 0)
}

impl<'a> ResolutionView<'a> {
    /// `substeps = 0` skips the sub-level needed for off-diagonal and
    /// cross-particle iterated integrals. Otherwise the sub-level has
    /// `min(substeps, n_max / n)` cells per step.
    pub fn new(real: &'a NoiseRealization, n: usize, substeps: usize) -> Result<Self> {
        let n_max = real.spec.n_max;
        if n == 0 || n > n_max || !n_max.is_multiple_of(n) || !(n_max / n).is_power_of_two() {
            return Err(Error::domain(format!(
                "resolution {n} is not a power-of-two divisor of {n_max}"
            )));
        }
        if substeps != 0 && !substeps.is_power_of_two() {
            return Err(Error::domain("substeps must be a power of two"));
        }
        let ratio = n_max / n;
        let sub = if substeps == 0 {
            0
        } else {
            substeps.min(ratio)
        };
        let (np, m) = (real.spec.particles, real.spec.noise_dim);
        let horizon = real.spec.horizon;

        let mut dw = vec![0.0; np * n * m];
        let mut jj = vec![0.0; np * n * m];
        let mut sub_dw = if sub > 0 {
            vec![0.0; np * n * sub * m]
        } else {
            Vec::new()
        };
        let mut cur_dw = vec![0.0; n_max * m];
        let mut cur_jj = vec![0.0; n_max * m];
        for i in 0..np {
            let base = i * n_max * m;
            cur_dw.copy_from_slice(&real.dw[base..base + n_max * m]);
            cur_jj.copy_from_slice(&real.jj[base..base + n_max * m]);
            let mut cells = n_max;
            loop {
                if sub > 0 && cells == n * sub {
                    sub_dw[i * cells * m..(i + 1) * cells * m]
                        .copy_from_slice(&cur_dw[..cells * m]);
                }
                if cells == n {
                    break;
                }
                let half = cells / 2;
                let len_r = horizon / cells as f64;
                for c in 0..half {
                    for l in 0..m {
                        let (a, b) = ((2 * c) * m + l, (2 * c + 1) * m + l);
                        let (x, y) = combine(cur_dw[a], cur_jj[a], cur_dw[b], cur_jj[b], len_r);
                        cur_dw[c * m + l] = x;
                        cur_jj[c * m + l] = y;
                    }
                }
                cells = half;
            }
            dw[i * n * m..(i + 1) * n * m].copy_from_slice(&cur_dw[..n * m]);
            jj[i * n * m..(i + 1) * n * m].copy_from_slice(&cur_jj[..n * m]);
        }

        let grid = Grid::new(horizon, n)?;
        let mut jump_start = vec![0; n + 1];
        let mut counts = vec![0usize; n];
        for e in &real.jumps {
            counts[cell_of(&grid, e.time)] += 1;
        }
        for k in 0..n {
            jump_start[k + 1] = jump_start[k] + counts[k];
        }
        Ok(Self {
            real,
            grid,
            ratio,
            dw,
            jj,
            substeps: sub,
            sub_dw,
            jump_start,
        })
    }

    pub fn realization(&self) -> &'a NoiseRealization {
        self.real
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    /// Effective substeps per step (0 when none are available).
    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn step(&self, k: usize) -> StepNoise<'_, 'a> {
        assert!(k < self.grid.steps());
        StepNoise { view: self, k }
    }
}

/// Everything a stepper may read about one coarse step.
#[derive(Debug, Clone, Copy)]
pub struct StepNoise<'v, 'a> {
    view: &'v ResolutionView<'a>,
    k: usize,
}

impl<'v, 'a> StepNoise<'v, 'a> {
    pub fn view(&self) -> &'v ResolutionView<'a> {
        self.view
    }

    pub fn index(&self) -> usize {
        self.k
    }

    pub fn start(&self) -> f64 {
        self.view.grid.point(self.k)
    }

    pub fn end(&self) -> f64 {
        self.view.grid.point(self.k + 1)
    }

    pub fn h(&self) -> f64 {
        self.view.grid.step_size()
    }

    pub fn noise_dim(&self) -> usize {
        self.view.real.spec.noise_dim
    }

    fn slot(&self, i: usize) -> usize {
        (i * self.view.grid.steps() + self.k) * self.noise_dim()
    }

    /// `w^i_{t_{k+1}} − w^i_{t_k}`.
    pub fn dw(&self, i: usize) -> &'v [f64] {
        let s = self.slot(i);
        &self.view.dw[s..s + self.noise_dim()]
    }

    /// `∫_{t_k}^{t_{k+1}} (w^i_s − w^i_{t_k}) ds`.
    pub fn time_integral(&self, i: usize) -> &'v [f64] {
        let s = self.slot(i);
        &self.view.jj[s..s + self.noise_dim()]
    }

    /// Global index of the first jump of this step.
    pub fn first_jump(&self) -> usize {
        self.view.jump_start[self.k]
    }

    /// Jumps with `t_k < τ ≤ t_{k+1}`, in time order.
    pub fn jumps(&self) -> &'a [JumpEvent] {
        let v = self.view;
        &v.real.jumps[v.jump_start[self.k]..v.jump_start[self.k + 1]]
    }

    /// `w^i_τ − w^i_{t_k}` at the time of jump `e` (a global index). Path
    /// `i` must be refined at that time.
    pub fn displacement(&self, i: usize, e: usize, out: &mut [f64]) {
        let real = self.view.real;
        let m = self.noise_dim();
        let tau = real.jumps[e].time;
        let first = self.k * self.view.ratio;
        let c = cell_of(&real.grid, tau);
        debug_assert!(c >= first && c < first + self.view.ratio);
        out.fill(0.0);
        for cell in first..c {
            for (o, w) in out.iter_mut().zip(real.fine_dw(i, cell)) {
                *o += w;
            }
        }
        let mut part = [0.0; 8];
        let part = if m <= 8 {
            &mut part[..m]
        } else {
            &mut vec![0.0; m][..]
        };
        if real.jumps[e].particle == i {
            part.copy_from_slice(&real.own_partial[e * m..(e + 1) * m]);
        } else {
            real.partial(i, tau, part);
        }
        for (o, p) in out.iter_mut().zip(part.iter()) {
            *o += p;
        }
    }

    fn sub_dw(&self, i: usize) -> &'v [f64] {
        let v = self.view;
        assert!(v.substeps > 0, "iterated integrals need substep data");
        let (m, s) = (self.noise_dim(), v.substeps);
        let base = ((i * v.grid.steps() + self.k) * s) * m;
        &v.sub_dw[base..base + s * m]
    }

    /// Self iterated integrals `I^{ℓ₁,ℓ} = ∫∫ dw^{ℓ₁}_r dw^ℓ_s`, written to
    /// `out[ℓ₁*m + ℓ]`. Diagonal entries are exact; off-diagonal ones use
    /// the substep sums and need `substeps() > 0` when `m ≥ 2`.
    pub fn iterated(&self, i: usize, out: &mut [f64]) {
        let m = self.noise_dim();
        let dw = self.dw(i);
        let h = self.h();
        for l in 0..m {
            out[l * m + l] = 0.5 * (dw[l] * dw[l] - h);
        }
        if m == 1 {
            return;
        }
        let sub = self.sub_dw(i);
        let s = self.view.substeps;
        for l1 in 0..m {
            for l in (l1 + 1)..m {
                // R^{ab} = Σ_j (W^a_{s_j} − W^a_a) ΔW^b_j
                let (mut w1, mut w2, mut r12, mut r21) = (0.0, 0.0, 0.0, 0.0);
                for j in 0..s {
                    let (d1, d2) = (sub[j * m + l1], sub[j * m + l]);
                    r12 += w1 * d2;
                    r21 += w2 * d1;
                    w1 += d1;
                    w2 += d2;
                }
                let area = 0.5 * (r12 - r21);
                let sym = 0.5 * dw[l1] * dw[l];
                out[l1 * m + l] = sym + area;
                out[l * m + l1] = sym - area;
            }
        }
    }

    /// Cross-particle integrals `I^{k→i; ℓ₁,ℓ} = ∫∫ dw^{kℓ₁}_r dw^{iℓ}_s`,
    /// written to `out[ℓ₁*m + ℓ]`. For `k = i` this is [`Self::iterated`].
    pub fn cross(&self, k: usize, i: usize, out: &mut [f64]) {
        if k == i {
            self.iterated(i, out);
            return;
        }
        let m = self.noise_dim();
        let (sk, si) = (self.sub_dw(k), self.sub_dw(i));
        let s = self.view.substeps;
        out.fill(0.0);
        let mut wk = [0.0; 8];
        let wk = if m <= 8 {
            &mut wk[..m]
        } else {
            &mut vec![0.0; m][..]
        };
        for j in 0..s {
            for l1 in 0..m {
                let mid = wk[l1] + 0.5 * sk[j * m + l1];
                for l in 0..m {
                    out[l1 * m + l] += mid * si[j * m + l];
                }
            }
            for l1 in 0..m {
                wk[l1] += sk[j * m + l1];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(np: usize, m: usize, n_max: usize, split_all: bool) -> NoiseSpec {
        NoiseSpec {
            particles: np,
            state_dim: 1,
            noise_dim: m,
            horizon: 1.0,
            n_max,
            split_all,
            initial: InitialLaw::default(),
        }
    }

    fn marks(lambda: f64) -> MarkMeasure {
        MarkMeasure::symmetric_unit(lambda).unwrap()
    }

    #[test]
    fn no_jumps_means_plain_fine_grid() {
        let s = spec(3, 1, 16, true);
        let real = sample_realization(&s, &marks(0.0), &SeedSequence::new(1), 0).unwrap();
        assert!(real.jumps().is_empty());
        for i in 0..3 {
            let pts = real.union_points(i);
            let want: Vec<f64> = real.fine_grid().points().collect();
            assert_eq!(pts, want);
        }
    }

    #[test]
    fn reproducible_and_run_dependent() {
        let s = spec(4, 2, 32, true);
        let seeds = SeedSequence::new(7);
        let a = sample_realization(&s, &marks(3.0), &seeds, 2).unwrap();
        let b = sample_realization(&s, &marks(3.0), &seeds, 2).unwrap();
        assert_eq!(a, b);
        let c = sample_realization(&s, &marks(3.0), &seeds, 3).unwrap();
        assert_ne!(a.dw, c.dw);
    }

    #[test]
    fn splits_preserve_cell_totals() {
        let s = spec(5, 2, 8, true);
        let real = sample_realization(&s, &marks(6.0), &SeedSequence::new(3), 0).unwrap();
        assert!(!real.jumps().is_empty());
        let m = 2;
        for i in 0..5 {
            for c in 0..8 {
                if let Some((dw, jj)) = real.split_pieces(i, c) {
                    let times = real.split_times(i, c);
                    let mut bounds = vec![real.fine_grid().point(c)];
                    bounds.extend_from_slice(times);
                    bounds.push(real.fine_grid().point(c + 1));
                    for l in 0..m {
                        // J = Σ_p [J_p + (w_{a_p} − w_a)·len_p]
                        let (mut wl, mut jl) = (0.0, 0.0);
                        for p in 0..times.len() + 1 {
                            jl += jj[p * m + l] + wl * (bounds[p + 1] - bounds[p]);
                            wl += dw[p * m + l];
                        }
                        assert!((wl - real.fine_dw(i, c)[l]).abs() < 1e-13);
                        assert!((jl - real.fine_time_integral(i, c)[l]).abs() < 1e-13);
                    }
                }
            }
        }
    }

    #[test]
    fn every_path_refined_when_requested() {
        let s = spec(4, 1, 8, true);
        let real = sample_realization(&s, &marks(4.0), &SeedSequence::new(5), 1).unwrap();
        for e in real.jumps() {
            let c = cell_of(real.fine_grid(), e.time);
            for i in 0..4 {
                if e.time < real.fine_grid().point(c + 1) {
                    assert!(real.split_times(i, c).contains(&e.time));
                }
            }
        }
        let own = sample_realization(&spec(4, 1, 8, false), &marks(4.0), &SeedSequence::new(5), 1)
            .unwrap();
        for e in own.jumps() {
            let c = cell_of(own.fine_grid(), e.time);
            for i in 0..4 {
                assert_eq!(own.split_times(i, c).contains(&e.time), i == e.particle);
            }
        }
    }

    #[test]
    fn particle_paths_do_not_depend_on_system_size() {
        let seeds = SeedSequence::new(11);
        let small = sample_realization(&spec(3, 1, 16, false), &marks(2.0), &seeds, 0).unwrap();
        let large = sample_realization(&spec(9, 1, 16, false), &marks(2.0), &seeds, 0).unwrap();
        assert_eq!(small.dw[..], large.dw[..small.dw.len()]);
        assert_eq!(small.initial[..], large.initial[..3]);
        let own_small: Vec<_> = small.jumps().to_vec();
        let own_large: Vec<_> = large
            .jumps()
            .iter()
            .filter(|e| e.particle < 3)
            .copied()
            .collect();
        assert_eq!(own_small, own_large);
    }

    #[test]
    fn coarse_increments_are_pairwise_sums() {
        let s = spec(3, 2, 64, false);
        let real = sample_realization(&s, &marks(1.0), &SeedSequence::new(2), 0).unwrap();
        let fine = coarsen(&real, 16).unwrap();
        let coarse = coarsen(&real, 8).unwrap();
        let len_r = 1.0 / 16.0;
        for i in 0..3 {
            for k in 0..8 {
                let (a, b, c) = (fine.step(2 * k), fine.step(2 * k + 1), coarse.step(k));
                for l in 0..2 {
                    assert_eq!(c.dw(i)[l], a.dw(i)[l] + b.dw(i)[l]);
                    let j = a.time_integral(i)[l] + b.time_integral(i)[l] + a.dw(i)[l] * len_r;
                    assert_eq!(c.time_integral(i)[l], j);
                }
            }
        }
        assert!(coarsen(&real, 24).is_err());
        assert!(coarsen(&real, 128).is_err());
    }

    #[test]
    fn coarse_time_integral_matches_brute_force_path() {
        let s = spec(1, 1, 64, false);
        let real = sample_realization(&s, &marks(0.0), &SeedSequence::new(9), 0).unwrap();
        let view = coarsen(&real, 4).unwrap();
        let h = 1.0 / 64.0;
        for k in 0..4 {
            // J = Σ_j [J_j + (w_{a_j} − w_a)(b_j − a_j)]
            let (mut w, mut j) = (0.0, 0.0);
            for c in 16 * k..16 * (k + 1) {
                j += real.fine_time_integral(0, c)[0] + w * h;
                w += real.fine_dw(0, c)[0];
            }
            let st = view.step(k);
            assert!((st.time_integral(0)[0] - j).abs() < 1e-14);
            assert!((st.dw(0)[0] - w).abs() < 1e-14);
        }
    }

    #[test]
    fn jumps_partition_into_steps() {
        let s = spec(6, 1, 32, false);
        let real = sample_realization(&s, &marks(5.0), &SeedSequence::new(4), 0).unwrap();
        let view = coarsen(&real, 8).unwrap();
        let mut seen = 0;
        for k in 0..8 {
            let st = view.step(k);
            for e in st.jumps() {
                assert!(e.time > st.start() && e.time <= st.end());
            }
            seen += st.jumps().len();
        }
        assert_eq!(seen, real.jumps().len());
    }

    #[test]
    fn tie_rule_assigns_grid_times_to_left_interval() {
        let g = Grid::new(1.0, 4).unwrap();
        assert_eq!(cell_of(&g, 0.25), 0);
        assert_eq!(cell_of(&g, 0.2500001), 1);
        assert_eq!(cell_of(&g, 1.0), 3);
    }

    #[test]
    fn diagonal_iterated_integral_example() {
        // Δw = 0.3, h = 0.25 → (0.09 − 0.25)/2 = −0.08
        let s = spec(1, 1, 4, false);
        let mut real = sample_realization(&s, &marks(0.0), &SeedSequence::new(1), 0).unwrap();
        real.dw[0] = 0.3;
        let view = coarsen(&real, 4).unwrap();
        let mut out = [0.0];
        view.step(0).iterated(0, &mut out);
        assert!((out[0] + 0.08).abs() < 1e-15);
    }

    #[test]
    fn off_diagonal_symmetrisation() {
        let s = spec(2, 3, 64, false);
        let real = sample_realization(&s, &marks(0.0), &SeedSequence::new(8), 0).unwrap();
        let view = ResolutionView::new(&real, 4, 16).unwrap();
        let mut out = [0.0; 9];
        for k in 0..4 {
            let st = view.step(k);
            st.iterated(1, &mut out);
            let dw = st.dw(1);
            for a in 0..3 {
                for b in 0..3 {
                    let sum = out[a * 3 + b] + out[b * 3 + a];
                    let want = dw[a] * dw[b] - if a == b { st.h() } else { 0.0 };
                    assert!((sum - want).abs() <= 4.0 * f64::EPSILON * (1.0 + want.abs()));
                }
            }
        }
    }

    #[test]
    fn substeps_are_clamped_to_available_cells() {
        let s = spec(1, 2, 16, false);
        let real = sample_realization(&s, &marks(0.0), &SeedSequence::new(8), 0).unwrap();
        assert_eq!(ResolutionView::new(&real, 4, 32).unwrap().substeps(), 4);
        assert_eq!(ResolutionView::new(&real, 4, 2).unwrap().substeps(), 2);
        assert!(ResolutionView::new(&real, 4, 3).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let s = spec(3, 2, 8, true);
        let real = sample_realization(&s, &marks(4.0), &SeedSequence::new(6), 0).unwrap();
        let mut buf = Vec::new();
        real.write_dump(&mut buf).unwrap();
        let back = NoiseRealization::read_dump(&buf[..]).unwrap();
        assert_eq!(real, back);
        buf[0] = b'X';
        assert!(NoiseRealization::read_dump(&buf[..]).is_err());
    }

    #[test]
    fn split_pair_reproduces_totals() {
        let mut rng = SeedSequence::new(1).rng(0, 0, Stream::Probe);
        for _ in 0..100 {
            let (x1, j1, x2, j2) = split_pair(&mut rng, 0.3, 0.2, 0.7, -0.1);
            assert!((x1 + x2 - 0.7).abs() < 1e-15);
            assert!((j1 + j2 + x1 * 0.2 + 0.1).abs() < 1e-15);
        }
    }
}
