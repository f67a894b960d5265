use super::{cosine_grad, cosine_sim, match_to_labels, AlignError, FeatureRecord};
use crate::geometry::IouVariant;
use crate::scalar::Real;
use crate::toydet::Detection;

fn hinge_term<T: Real>(f: &[T], g: &[T], bg: &[Vec<T>], sigma: T) -> T {
    let n = T::lit(bg.len() as f64);
    let mean_bg = bg.iter().map(|b| cosine_sim(f, b)).fold(T::zero(), |a, s| a + s) / n;
    (mean_bg - cosine_sim(f, g) + sigma).max(T::zero())
}

/// Margin loss pulling each projected image feature towards its target and
/// away from the mean background similarity.
pub fn image_align_loss<T: Real>(records: &[FeatureRecord<T>], bg: &[Vec<T>], sigma: T) -> Result<T, AlignError> {
    image_align_loss_grad(records, bg, sigma).map(|(l, _)| l)
}

/// [`image_align_loss`] and its gradient with respect to every `f_img`.
pub fn image_align_loss_grad<T: Real>(
    records: &[FeatureRecord<T>],
    bg: &[Vec<T>],
    sigma: T,
) -> Result<(T, Vec<Vec<T>>), AlignError> {
    if records.is_empty() {
        return Ok((T::zero(), Vec::new()));
    }
    if bg.is_empty() {
        return Err(AlignError::NoBackground);
    }
    let n = T::lit(records.len() as f64);
    let nb = T::lit(bg.len() as f64);
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let g = r.g_img.as_ref().ok_or(AlignError::MissingImageTarget(i))?;
        let term = hinge_term(&r.f_img, g, bg, sigma);
        total += term;
        let mut d = vec![T::zero(); r.f_img.len()];
        if term > T::zero() {
            for b in bg {
                let (_, da, _) = cosine_grad(&r.f_img, b);
                for (x, y) in d.iter_mut().zip(&da) {
                    *x += *y / (nb * n);
                }
            }
            let (_, da, _) = cosine_grad(&r.f_img, g);
            for (x, y) in d.iter_mut().zip(&da) {
                *x -= *y / n;
            }
        }
        grads.push(d);
    }
    Ok((total / n, grads))
}

/// Mean cosine distance between projected text features and their targets.
pub fn text_align_loss<T: Real>(records: &[FeatureRecord<T>]) -> Result<T, AlignError> {
    text_align_loss_grad(records).map(|(l, _)| l)
}

pub fn text_align_loss_grad<T: Real>(records: &[FeatureRecord<T>]) -> Result<(T, Vec<Vec<T>>), AlignError> {
    if records.is_empty() {
        return Ok((T::zero(), Vec::new()));
    }
    let n = T::lit(records.len() as f64);
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let g = r.g_text.as_ref().ok_or(AlignError::MissingTextTarget(i))?;
        let (s, da, _) = cosine_grad(&r.f_text, g);
        total += T::one() - s;
        grads.push(da.into_iter().map(|v| -v / n).collect());
    }
    Ok((total / n, grads))
}

/// Mean cosine distance between student RoI features and the features of
/// their matched teacher boxes.
pub fn teacher_student_align_loss<T: Real>(
    student: &[Detection<T>],
    teacher: &[Detection<T>],
    eta: f64,
    variant: IouVariant,
) -> T {
    teacher_student_align_loss_grad(student, teacher, eta, variant).0
}

/// The loss, its gradient with respect to each student `f3d` (teacher
/// features are constants) and the number of matched pairs.
pub fn teacher_student_align_loss_grad<T: Real>(
    student: &[Detection<T>],
    teacher: &[Detection<T>],
    eta: f64,
    variant: IouVariant,
) -> (T, Vec<Vec<T>>, usize) {
    let boxes: Vec<_> = teacher.iter().map(|d| d.bbox).collect();
    let pairs = match_to_labels(student, &boxes, eta, variant);
    let mut grads: Vec<Vec<T>> = student.iter().map(|d| vec![T::zero(); d.f3d.len()]).collect();
    if pairs.is_empty() {
        return (T::zero(), grads, 0);
    }
    let n = T::lit(pairs.len() as f64);
    let mut total = T::zero();
    for &(s, t) in &pairs {
        let (sim, da, _) = cosine_grad(&student[s].f3d, &teacher[t].f3d);
        total += T::one() - sim;
        for (x, y) in grads[s].iter_mut().zip(&da) {
            *x -= *y / n;
        }
    }
    (total / n, grads, pairs.len())
}
