//! Exact Euclidean distance transform with anisotropic spacing.

/// Lower envelope of parabolas; `f` holds squared distances (∞ for no site)
/// at positions `i·s`.
fn edt_1d(f: &[f64], s: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let pq = q as f64 * s;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&r) => {
                    let pr = r as f64 * s;
                    let sect = ((f[q] + pq * pq) - (f[r] + pr * pr)) / (2.0 * (pq - pr));
                    if sect <= *z.last().expect("paired with v") {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(sect);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let pq = q as f64 * s;
        while k + 1 < v.len() && z[k + 1] < pq {
            k += 1;
        }
        let pr = v[k] as f64 * s;
        *o = (pq - pr) * (pq - pr) + f[v[k]];
    }
}

/// Squared distance in mm from every voxel to the nearest site.
pub fn squared_edt(sites: &[bool], shape: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let [d, h, w] = shape;
    let mut g: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let strides = [h * w, w, 1];
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let n = shape[axis];
        let st = strides[axis];
        let mut line = vec![0.0; n];
        let mut res = vec![0.0; n];
        for base in 0..d * h * w {
            let pos = [base / (h * w), (base / w) % h, base % w];
            if pos[axis] != 0 {
                continue;
            }
            for i in 0..n {
                line[i] = g[base + i * st];
            }
            edt_1d(&line, spacing[axis], &mut res, &mut v, &mut z);
            for i in 0..n {
                g[base + i * st] = res[i];
            }
        }
    }
    g
}
