//! Adaptive Dormand-Prince 8(5,3) integrator with Lund-stabilised (PI) step
//! control, specialised to fixed-size nalgebra vectors.

use std::ops::ControlFlow;

use nalgebra::SVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rel: 1e-12, abs: 1e-12 }
    }
}

impl Tolerances {
    pub fn new(rel: f64, abs: f64) -> Result<Self> {
        let ok = |v: f64| v > 0.0 && v <= 1e-3;
        if !ok(rel) || !ok(abs) {
            return Err(Error::InvalidArgument(format!(
                "tolerances must lie in (0, 1e-3], got rel={rel:e} abs={abs:e}"
            )));
        }
        Ok(Self { rel, abs })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Dop853 {
    pub tol: Tolerances,
    pub max_steps: usize,
    /// Step-size floor relative to the time scale of the problem.
    pub h_min: f64,
    safe: f64,
    beta: f64,
    fac_min: f64,
    fac_max: f64,
}

impl Dop853 {
    pub fn new(tol: Tolerances) -> Self {
        Self {
            tol,
            max_steps: 200_000,
            h_min: 1e-14,
            safe: 0.9,
            beta: 0.04,
            fac_min: 1.0 / 3.0,
            fac_max: 6.0,
        }
    }

    /// Integrates `f` from `(t0, y0)` to `t1` (forward or backward). The
    /// observer sees every accepted step, starting with the initial point, and
    /// may stop the integration early; the state at the stopping step is
    /// returned.
    pub fn integrate<const D: usize, F, O>(
        &self,
        f: &F,
        t0: f64,
        y0: SVector<f64, D>,
        t1: f64,
        mut observer: O,
    ) -> Result<(f64, SVector<f64, D>)>
    where
        F: Fn(f64, &SVector<f64, D>) -> Result<SVector<f64, D>>,
        O: FnMut(f64, &SVector<f64, D>) -> ControlFlow<()>,
    {
        if !t0.is_finite() || !t1.is_finite() {
            return Err(Error::InvalidArgument("time span must be finite".into()));
        }
        let mut t = t0;
        let mut y = y0;
        if observer(t, &y).is_break() || t1 == t0 {
            return Ok((t, y));
        }
        let dir = (t1 - t0).signum();
        let span = (t1 - t0).abs();
        let mut k1 = f(t, &y)?;
        let mut h = self.initial_step(f, t, &y, &k1, dir, span)?;
        let mut fac_old: f64 = 1e-4;
        let mut last_rejected = false;

        for _ in 0..self.max_steps {
            let remaining = (t1 - t).abs();
            let mut last = false;
            if h.abs() >= remaining * (1.0 - 1e-14) {
                h = dir * remaining;
                last = true;
            }
            if h.abs() < self.h_min * (1.0 + t.abs()) {
                return Err(Error::Propagation {
                    time: t,
                    reason: format!("step size underflow (h = {h:e})"),
                });
            }
            let step = stage_step(f, t, &y, &k1, h);
            let step = match step {
                Ok(s) => s,
                Err(Error::Singularity { .. }) => {
                    // shrink and retry; persistent singularity surfaces as underflow
                    h *= 0.25;
                    last_rejected = true;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let err = self.error_norm(&y, &step, h);
            let expo = 1.0 / 8.0 - self.beta * 0.2;
            let fac11 = err.powf(expo);
            if err <= 1.0 && err.is_finite() {
                let mut fac = fac11 / fac_old.powf(self.beta);
                fac = (1.0 / self.fac_max).max((1.0 / self.fac_min).min(fac / self.safe));
                let mut h_new = h / fac;
                fac_old = err.max(1e-4);
                t = if last { t1 } else { t + h };
                y = step.y_new;
                k1 = f(t, &y).map_err(|e| Error::Propagation {
                    time: t,
                    reason: e.to_string(),
                })?;
                if !y.iter().all(|v| v.is_finite()) {
                    return Err(Error::Propagation {
                        time: t,
                        reason: "non-finite state".into(),
                    });
                }
                if observer(t, &y).is_break() || last {
                    return Ok((t, y));
                }
                if last_rejected {
                    h_new = dir * h_new.abs().min(h.abs());
                }
                last_rejected = false;
                h = h_new;
            } else {
                let shrink = if err.is_finite() {
                    (1.0 / self.fac_min).min(fac11 / self.safe)
                } else {
                    1.0 / self.fac_min
                };
                h /= shrink;
                last_rejected = true;
            }
        }
        Err(Error::Propagation {
            time: t,
            reason: format!("exceeded {} steps", self.max_steps),
        })
    }

    fn error_norm<const D: usize>(&self, y: &SVector<f64, D>, s: &StageResult<D>, h: f64) -> f64 {
        let mut err = 0.0;
        let mut err2 = 0.0;
        for i in 0..D {
            let sk = self.tol.abs + self.tol.rel * y[i].abs().max(s.y_new[i].abs());
            err2 += (s.err3[i] / sk).powi(2);
            err += (s.err5[i] / sk).powi(2);
        }
        let mut deno = err + 0.01 * err2;
        if deno <= 0.0 {
            deno = 1.0;
        }
        h.abs() * err * (1.0 / (deno * D as f64)).sqrt()
    }

    fn initial_step<const D: usize, F>(
        &self,
        f: &F,
        t: f64,
        y: &SVector<f64, D>,
        f0: &SVector<f64, D>,
        dir: f64,
        span: f64,
    ) -> Result<f64>
    where
        F: Fn(f64, &SVector<f64, D>) -> Result<SVector<f64, D>>,
    {
        let sk = y.map(|v| self.tol.abs + self.tol.rel * v.abs());
        let dnf = f0.component_div(&sk).norm_squared();
        let dny = y.component_div(&sk).norm_squared();
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
            1e-6
        } else {
            (dny / dnf).sqrt() * 0.01
        };
        h = h.min(span);
        let y1 = y + f0 * (dir * h);
        let f1 = f(t + dir * h, &y1)?;
        let der2 = (f1 - f0).component_div(&sk).norm() / h;
        let der12 = der2.max(dnf.sqrt());
        let h1 = if der12 <= 1e-15 {
            (1e-6_f64).max(h * 1e-3)
        } else {
            (0.01 / der12).powf(1.0 / 8.0)
        };
        Ok(dir * (100.0 * h).min(h1).min(span))
    }
}

struct StageResult<const D: usize> {
    y_new: SVector<f64, D>,
    err5: SVector<f64, D>,
    err3: SVector<f64, D>,
}

/// Single DOP853 step of size `h` without error control, used for event
/// refinement.
pub fn dop853_step<const D: usize, F>(
    f: &F,
    t: f64,
    y: &SVector<f64, D>,
    h: f64,
) -> Result<SVector<f64, D>>
where
    F: Fn(f64, &SVector<f64, D>) -> Result<SVector<f64, D>>,
{
    let k1 = f(t, y)?;
    Ok(stage_step(f, t, y, &k1, h)?.y_new)
}

fn stage_step<const D: usize, F>(
    f: &F,
    t: f64,
    y: &SVector<f64, D>,
    k1: &SVector<f64, D>,
    h: f64,
) -> Result<StageResult<D>>
where
    F: Fn(f64, &SVector<f64, D>) -> Result<SVector<f64, D>>,
{
    let k1 = *k1;
    let k2 = f(t + C2 * h, &(y + k1 * (A21 * h)))?;
    let k3 = f(t + C3 * h, &(y + (k1 * A31 + k2 * A32) * h))?;
    let k4 = f(t + C4 * h, &(y + (k1 * A41 + k3 * A43) * h))?;
    let k5 = f(t + C5 * h, &(y + (k1 * A51 + k3 * A53 + k4 * A54) * h))?;
    let k6 = f(t + C6 * h, &(y + (k1 * A61 + k4 * A64 + k5 * A65) * h))?;
    let k7 = f(
        t + C7 * h,
        &(y + (k1 * A71 + k4 * A74 + k5 * A75 + k6 * A76) * h),
    )?;
    let k8 = f(
        t + C8 * h,
        &(y + (k1 * A81 + k4 * A84 + k5 * A85 + k6 * A86 + k7 * A87) * h),
    )?;
    let k9 = f(
        t + C9 * h,
        &(y + (k1 * A91 + k4 * A94 + k5 * A95 + k6 * A96 + k7 * A97 + k8 * A98) * h),
    )?;
    let k10 = f(
        t + C10 * h,
        &(y + (k1 * A101 + k4 * A104 + k5 * A105 + k6 * A106 + k7 * A107 + k8 * A108 + k9 * A109)
            * h),
    )?;
    let k11 = f(
        t + C11 * h,
        &(y + (k1 * A111
            + k4 * A114
            + k5 * A115
            + k6 * A116
            + k7 * A117
            + k8 * A118
            + k9 * A119
            + k10 * A1110)
            * h),
    )?;
    let k12 = f(
        t + h,
        &(y + (k1 * A121
            + k4 * A124
            + k5 * A125
            + k6 * A126
            + k7 * A127
            + k8 * A128
            + k9 * A129
            + k10 * A1210
            + k11 * A1211)
            * h),
    )?;
    let incr = k1 * B1 + k6 * B6 + k7 * B7 + k8 * B8 + k9 * B9 + k10 * B10 + k11 * B11 + k12 * B12;
    let y_new = y + incr * h;
    let err3 = incr - k1 * BHH1 - k9 * BHH2 - k12 * BHH3;
    let err5 = k1 * ER1
        + k6 * ER6
        + k7 * ER7
        + k8 * ER8
        + k9 * ER9
        + k10 * ER10
        + k11 * ER11
        + k12 * ER12;
    Ok(StageResult { y_new, err5, err3 })
}

// Dormand-Prince 8(5,3) tableau (Hairer, Norsett & Wanner).
const C2: f64 = 0.526001519587677318785587544488E-01;
const C3: f64 = 0.789002279381515978178381316732E-01;
const C4: f64 = 0.118350341907227396726757197510E+00;
const C5: f64 = 0.281649658092772603273242802490E+00;
const C6: f64 = 0.333333333333333333333333333333E+00;
const C7: f64 = 0.25E+00;
const C8: f64 = 0.307692307692307692307692307692E+00;
const C9: f64 = 0.651282051282051282051282051282E+00;
const C10: f64 = 0.6E+00;
const C11: f64 = 0.857142857142857142857142857142E+00;

const A21: f64 = 5.26001519587677318785587544488E-2;
const A31: f64 = 1.97250569845378994544595329183E-2;
const A32: f64 = 5.91751709536136983633785987549E-2;
const A41: f64 = 2.95875854768068491816892993775E-2;
const A43: f64 = 8.87627564304205475450678981324E-2;
const A51: f64 = 2.41365134159266685502369798665E-1;
const A53: f64 = -8.84549479328286085344864962717E-1;
const A54: f64 = 9.24834003261792003115737966543E-1;
const A61: f64 = 3.7037037037037037037037037037E-2;
const A64: f64 = 1.70828608729473871279604482173E-1;
const A65: f64 = 1.25467687566822425016691814123E-1;
const A71: f64 = 3.7109375E-2;
const A74: f64 = 1.70252211019544039314978060272E-1;
const A75: f64 = 6.02165389804559606850219397283E-2;
const A76: f64 = -1.7578125E-2;
const A81: f64 = 3.70920001185047927108779319836E-2;
const A84: f64 = 1.70383925712239993810214054705E-1;
const A85: f64 = 1.07262030446373284651809199168E-1;
const A86: f64 = -1.53194377486244017527936158236E-2;
const A87: f64 = 8.27378916381402288758473766002E-3;
const A91: f64 = 6.24110958716075717114429577812E-1;
const A94: f64 = -3.36089262944694129406857109825E0;
const A95: f64 = -8.68219346841726006818189891453E-1;
const A96: f64 = 2.75920996994467083049415600797E1;
const A97: f64 = 2.01540675504778934086186788979E1;
const A98: f64 = -4.34898841810699588477366255144E1;
const A101: f64 = 4.77662536438264365890433908527E-1;
const A104: f64 = -2.48811461997166764192642586468E0;
const A105: f64 = -5.90290826836842996371446475743E-1;
const A106: f64 = 2.12300514481811942347288949897E1;
const A107: f64 = 1.52792336328824235832596922938E1;
const A108: f64 = -3.32882109689848629194453265587E1;
const A109: f64 = -2.03312017085086261358222928593E-2;
const A111: f64 = -9.3714243008598732571704021658E-1;
const A114: f64 = 5.18637242884406370830023853209E0;
const A115: f64 = 1.09143734899672957818500254654E0;
const A116: f64 = -8.14978701074692612513997267357E0;
const A117: f64 = -1.85200656599969598641566180701E1;
const A118: f64 = 2.27394870993505042818970056734E1;
const A119: f64 = 2.49360555267965238987089396762E0;
const A1110: f64 = -3.0467644718982195003823669022E0;
const A121: f64 = 2.27331014751653820792359768449E0;
const A124: f64 = -1.05344954667372501984066689879E1;
const A125: f64 = -2.00087205822486249909675718444E0;
const A126: f64 = -1.79589318631187989172765950534E1;
const A127: f64 = 2.79488845294199600508499808837E1;
const A128: f64 = -2.85899827713502369474065508674E0;
const A129: f64 = -8.87285693353062954433549289258E0;
const A1210: f64 = 1.23605671757943030647266201528E1;
const A1211: f64 = 6.43392746015763530355970484046E-1;

const B1: f64 = 5.42937341165687622380535766363E-2;
const B6: f64 = 4.45031289275240888144113950566E0;
const B7: f64 = 1.89151789931450038304281599044E0;
const B8: f64 = -5.8012039600105847814672114227E0;
const B9: f64 = 3.1116436695781989440891606237E-1;
const B10: f64 = -1.52160949662516078556178806805E-1;
const B11: f64 = 2.01365400804030348374776537501E-1;
const B12: f64 = 4.47106157277725905176885569043E-2;

const BHH1: f64 = 0.244094488188976377952755905512E+00;
const BHH2: f64 = 0.733846688281611857341361741547E+00;
const BHH3: f64 = 0.220588235294117647058823529412E-01;

const ER1: f64 = 0.1312004499419488073250102996E-01;
const ER6: f64 = -0.1225156446376204440720569753E+01;
const ER7: f64 = -0.4957589496572501915214079952E+00;
const ER8: f64 = 0.1664377182454986536961530415E+01;
const ER9: f64 = -0.3503288487499736816886487290E+00;
const ER10: f64 = 0.3341791187130174790297318841E+00;
const ER11: f64 = 0.8192320648511571246570742613E-01;
const ER12: f64 = -0.2235530786388629525884427845E-01;
