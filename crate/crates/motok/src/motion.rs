//! The 9-channel motion representation and rest-pose augmentation.
//!
//! A motion sequence over J joints and T frames is a T x J x 9 array. The
//! root row holds the frame-to-frame root displacement plus the global
//! orientation as a 6-D rotation; every other row holds zeros plus the
//! parent-relative rotation. Rotations use the continuity-friendly 6-D
//! format: the first two columns of the rotation matrix, decoded back with
//! Gram-Schmidt.

use crate::skeleton::{forward_kinematics, PoseFrame, Skeleton};
use crate::{Mat3, Vec3};
use thiserror::Error;

/// First two columns of a rotation matrix, flattened column-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6d(pub [f64; 6]);

#[derive(Debug, Error, PartialEq)]
pub enum Rot6dError {
    #[error("degenerate 6-D rotation: first column is (near) zero")]
    ZeroColumn,
    #[error("degenerate 6-D rotation: columns are (near) parallel")]
    ParallelColumns,
}

/// Extract the 6-D representation: columns 1 and 2 of `rot`.
pub fn rot6d_from_matrix(rot: &Mat3) -> Rot6d {
    Rot6d([
        rot[(0, 0)],
        rot[(1, 0)],
        rot[(2, 0)],
        rot[(0, 1)],
        rot[(1, 1)],
        rot[(2, 1)],
    ])
}

/// Gram-Schmidt decode: b1 = normalize(a1), b2 = normalize(a2 - (b1.a2) b1),
/// b3 = b1 x b2. Invariant to positive per-column scaling.
pub fn rot6d_to_matrix(v: &Rot6d) -> Result<Mat3, Rot6dError> {
    let a1 = Vec3::new(v.0[0], v.0[1], v.0[2]);
    let a2 = Vec3::new(v.0[3], v.0[4], v.0[5]);
    let n1 = a1.norm();
    if n1 < 1e-12 {
        return Err(Rot6dError::ZeroColumn);
    }
    let b1 = a1 / n1;
    let proj = a2 - b1 * b1.dot(&a2);
    let n2 = proj.norm();
    if n2 < 1e-12 {
        return Err(Rot6dError::ParallelColumns);
    }
    let b2 = proj / n2;
    let b3 = b1.cross(&b2);
    Ok(Mat3::from_columns(&[b1, b2, b3]))
}

/// A motion sequence in root-delta + 6-D rotation form.
///
/// `data` is T x J x 9 row-major. The representation is tied to the rest
/// pose it was extracted against, recorded as the skeleton's content hash.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFeatures {
    pub data: Vec<f64>,
    pub joints: usize,
    pub frame_time: f64,
    pub skeleton_id: u64,
}

impl MotionFeatures {
    pub fn zeros(frames: usize, joints: usize, frame_time: f64, skeleton_id: u64) -> Self {
        MotionFeatures {
            data: vec![0.0; frames * joints * 9],
            joints,
            frame_time,
            skeleton_id,
        }
    }

    pub fn frames(&self) -> usize {
        if self.joints == 0 {
            0
        } else {
            self.data.len() / (self.joints * 9)
        }
    }

    pub fn row(&self, t: usize, j: usize) -> &[f64] {
        let base = (t * self.joints + j) * 9;
        &self.data[base..base + 9]
    }

    pub fn row_mut(&mut self, t: usize, j: usize) -> &mut [f64] {
        let base = (t * self.joints + j) * 9;
        &mut self.data[base..base + 9]
    }

    /// Structural invariant: non-root rows carry zero translation.
    pub fn non_root_translations_zero(&self) -> bool {
        (0..self.frames())
            .all(|t| (1..self.joints).all(|j| self.row(t, j)[..3].iter().all(|v| *v == 0.0)))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MotionError {
    #[error("frame {frame}, joint {joint}: {source}")]
    DegenerateRotation {
        frame: usize,
        joint: usize,
        source: Rot6dError,
    },
    #[error("motion has {got} joints but the skeleton has {expected}")]
    JointCountMismatch { got: usize, expected: usize },
}

/// Encode a pose sequence: root rows get position deltas (zero at t = 0) and
/// the global orientation; other rows get the parent-relative rotation.
pub fn features_from_poses(
    skel: &Skeleton,
    frames: &[PoseFrame],
    frame_time: f64,
) -> MotionFeatures {
    assert!(!frames.is_empty(), "need at least one frame");
    let j_count = skel.len();
    let mut out = MotionFeatures::zeros(frames.len(), j_count, frame_time, skel.content_hash());
    let root = skel.root();
    for (t, frame) in frames.iter().enumerate() {
        for j in 0..j_count {
            let row = out.row_mut(t, j);
            if j == root && t > 0 {
                let d = frame.root_position - frames[t - 1].root_position;
                row[0] = d[0];
                row[1] = d[1];
                row[2] = d[2];
            }
            // The root's local rotation is the global orientation.
            let r6 = rot6d_from_matrix(&frame.local_rotations[j]);
            row[3..9].copy_from_slice(&r6.0);
        }
    }
    out
}

/// Decode a motion back to poses: cumulative root deltas from `initial_root`,
/// Gram-Schmidt per rotation block.
pub fn poses_from_features(
    skel: &Skeleton,
    motion: &MotionFeatures,
    initial_root: Vec3,
) -> Result<Vec<PoseFrame>, MotionError> {
    if motion.joints != skel.len() {
        return Err(MotionError::JointCountMismatch {
            got: motion.joints,
            expected: skel.len(),
        });
    }
    let root = skel.root();
    let mut frames = Vec::with_capacity(motion.frames());
    let mut pos = initial_root;
    for t in 0..motion.frames() {
        let row = motion.row(t, root);
        if t > 0 {
            pos += Vec3::new(row[0], row[1], row[2]);
        }
        let mut local = Vec::with_capacity(skel.len());
        for j in 0..skel.len() {
            let r = motion.row(t, j);
            let rot = rot6d_to_matrix(&Rot6d(r[3..9].try_into().unwrap())).map_err(|source| {
                MotionError::DegenerateRotation {
                    frame: t,
                    joint: j,
                    source,
                }
            })?;
            local.push(rot);
        }
        frames.push(PoseFrame {
            root_position: pos,
            local_rotations: local,
        });
    }
    Ok(frames)
}

/// Rest-pose randomization: re-anchor the skeleton at frame `anchor_frame`.
///
/// The new rest offsets are the posed bone vectors at the anchor; local
/// rotations are recomputed against the anchor's global rotations so that
/// forward kinematics of the new pair reproduces the original world-space
/// joint positions at every frame.
pub fn augment_rest_pose(
    skel: &Skeleton,
    frames: &[PoseFrame],
    anchor_frame: usize,
) -> (Skeleton, Vec<PoseFrame>) {
    assert!(anchor_frame < frames.len(), "anchor frame out of range");
    let (anchor_pos, anchor_rot) = forward_kinematics(skel, &frames[anchor_frame]);

    let offsets: Vec<Vec3> = (0..skel.len())
        .map(|i| match skel.parent[i] {
            Some(p) => anchor_pos[i] - anchor_pos[p],
            None => anchor_pos[i],
        })
        .collect();
    let new_skel = Skeleton::new(skel.joint_names.clone(), skel.parent.clone(), offsets);

    // New global rotations are the originals composed with the inverse of the
    // anchor's; the parent-relative form below telescopes back to them.
    let new_frames: Vec<PoseFrame> = frames
        .iter()
        .map(|f| {
            let (_, rot) = forward_kinematics(skel, f);
            let global_new: Vec<Mat3> = (0..skel.len())
                .map(|i| rot[i] * anchor_rot[i].transpose())
                .collect();
            let local: Vec<Mat3> = (0..skel.len())
                .map(|i| match skel.parent[i] {
                    Some(p) => global_new[p].transpose() * global_new[i],
                    None => global_new[i],
                })
                .collect();
            PoseFrame {
                root_position: f.root_position,
                local_rotations: local,
            }
        })
        .collect();
    (new_skel, new_frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_rotation(rng: &mut StdRng) -> Mat3 {
        crate::bvh::euler_to_matrix(
            [
                rng.gen_range(-180.0..180.0),
                rng.gen_range(-89.0..89.0),
                rng.gen_range(-180.0..180.0),
            ],
            [2, 0, 1],
        )
    }

    #[test]
    fn rot6d_identity() {
        assert_eq!(
            rot6d_from_matrix(&Mat3::identity()).0,
            [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        );
        let m = rot6d_to_matrix(&Rot6d([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        assert!((m - Mat3::identity()).norm() < 1e-12);
    }

    #[test]
    fn rot6d_z90() {
        let r = crate::bvh::axis_rotation(2, std::f64::consts::FRAC_PI_2);
        let v = rot6d_from_matrix(&r);
        let expect = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        for (a, b) in v.0.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rot6d_round_trip() {
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..200 {
            let r = random_rotation(&mut rng);
            let back = rot6d_to_matrix(&rot6d_from_matrix(&r)).unwrap();
            assert!((r - back).norm() < 1e-9);
        }
    }

    #[test]
    fn rot6d_scale_invariant() {
        let m = rot6d_to_matrix(&Rot6d([2.0, 0.0, 0.0, 0.0, 3.0, 0.0])).unwrap();
        assert!((m - Mat3::identity()).norm() < 1e-12);
    }

    #[test]
    fn rot6d_noisy_columns_decode_orthonormal() {
        let mut rng = StdRng::seed_from_u64(22);
        for _ in 0..200 {
            let r = random_rotation(&mut rng);
            let mut v = rot6d_from_matrix(&r).0;
            for x in &mut v {
                *x += rng.gen_range(-0.05..0.05) / 6f64.sqrt();
            }
            let m = rot6d_to_matrix(&Rot6d(v)).unwrap();
            assert!((m.transpose() * m - Mat3::identity()).norm() < 1e-9);
            assert!((m.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rot6d_degenerate_inputs_error() {
        assert_eq!(
            rot6d_to_matrix(&Rot6d([0.0; 6])),
            Err(Rot6dError::ZeroColumn)
        );
        assert_eq!(
            rot6d_to_matrix(&Rot6d([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])),
            Err(Rot6dError::ParallelColumns)
        );
    }

    fn test_skeleton(n: usize) -> Skeleton {
        Skeleton::new(
            (0..n).map(|i| format!("j{i}")).collect(),
            (0..n)
                .map(|i| if i == 0 { None } else { Some(i - 1) })
                .collect(),
            (0..n)
                .map(|i| {
                    if i == 0 {
                        Vec3::zeros()
                    } else {
                        Vec3::new(0.3, 0.7, 0.1)
                    }
                })
                .collect(),
        )
    }

    fn random_frames(rng: &mut StdRng, n: usize, t: usize) -> Vec<PoseFrame> {
        (0..t)
            .map(|_| PoseFrame {
                root_position: Vec3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                ),
                local_rotations: (0..n).map(|_| random_rotation(rng)).collect(),
            })
            .collect()
    }

    #[test]
    fn static_pose_gives_zero_deltas_constant_rotations() {
        let skel = test_skeleton(3);
        let mut rng = StdRng::seed_from_u64(23);
        let pose = random_frames(&mut rng, 3, 1).pop().unwrap();
        let frames = vec![pose; 5];
        let m = features_from_poses(&skel, &frames, 1.0 / 30.0);
        for t in 0..5 {
            assert_eq!(&m.row(t, 0)[..3], &[0.0, 0.0, 0.0]);
            assert_eq!(m.row(t, 0), m.row(0, 0));
        }
        assert!(m.non_root_translations_zero());
    }

    #[test]
    fn root_deltas_are_finite_differences() {
        let skel = test_skeleton(2);
        let mut frames: Vec<PoseFrame> = (0..3).map(|_| PoseFrame::rest(2)).collect();
        frames[0].root_position = Vec3::new(0.0, 0.0, 0.0);
        frames[1].root_position = Vec3::new(1.0, 0.0, 0.0);
        frames[2].root_position = Vec3::new(3.0, 0.0, 0.0);
        let m = features_from_poses(&skel, &frames, 1.0 / 30.0);
        assert_eq!(&m.row(0, 0)[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&m.row(1, 0)[..3], &[1.0, 0.0, 0.0]);
        assert_eq!(&m.row(2, 0)[..3], &[2.0, 0.0, 0.0]);

        let back = poses_from_features(&skel, &m, Vec3::zeros()).unwrap();
        assert_eq!(back[2].root_position, Vec3::new(3.0, 0.0, 0.0));
    }

    #[test]
    fn features_round_trip() {
        let mut rng = StdRng::seed_from_u64(24);
        let skel = test_skeleton(5);
        let frames = random_frames(&mut rng, 5, 8);
        let m = features_from_poses(&skel, &frames, 1.0 / 30.0);
        let back = poses_from_features(&skel, &m, frames[0].root_position).unwrap();
        for (a, b) in frames.iter().zip(&back) {
            assert!((a.root_position - b.root_position).norm() < 1e-6);
            for (ra, rb) in a.local_rotations.iter().zip(&b.local_rotations) {
                assert!((ra - rb).norm() < 1e-6);
            }
        }
        let m2 = features_from_poses(&skel, &back, 1.0 / 30.0);
        for (a, b) in m.data.iter().zip(&m2.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_rotation_block_names_location() {
        let skel = test_skeleton(3);
        let mut m = MotionFeatures::zeros(2, 3, 1.0 / 30.0, skel.content_hash());
        for t in 0..2 {
            for j in 0..3 {
                m.row_mut(t, j)[3..9].copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
            }
        }
        m.row_mut(1, 2)[3..9].copy_from_slice(&[0.0; 6]);
        let err = poses_from_features(&skel, &m, Vec3::zeros()).unwrap_err();
        assert_eq!(
            err,
            MotionError::DegenerateRotation {
                frame: 1,
                joint: 2,
                source: Rot6dError::ZeroColumn
            }
        );
    }

    #[test]
    fn augment_at_rest_anchor_keeps_offsets() {
        let skel = test_skeleton(4);
        let mut frames = vec![PoseFrame::rest(4); 3];
        for f in &mut frames {
            f.root_position = skel.rest_offsets[0];
        }
        let (new_skel, new_frames) = augment_rest_pose(&skel, &frames, 0);
        for (a, b) in skel.rest_offsets.iter().zip(&new_skel.rest_offsets) {
            assert!((a - b).norm() < 1e-9);
        }
        for f in &new_frames {
            for r in &f.local_rotations {
                assert!((r - Mat3::identity()).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn augment_preserves_world_positions() {
        let mut rng = StdRng::seed_from_u64(25);
        for _ in 0..20 {
            let n = rng.gen_range(2..10);
            let skel = crate::skeleton::tests::random_tree(&mut rng, n);
            let frames = random_frames(&mut rng, n, 6);
            let anchor = rng.gen_range(0..frames.len());
            let (new_skel, new_frames) = augment_rest_pose(&skel, &frames, anchor);
            for (f_old, f_new) in frames.iter().zip(&new_frames) {
                let (p_old, _) = forward_kinematics(&skel, f_old);
                let (p_new, _) = forward_kinematics(&new_skel, f_new);
                for (a, b) in p_old.iter().zip(&p_new) {
                    assert!((a - b).norm() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn augment_offsets_match_anchor_bone_vectors() {
        let mut rng = StdRng::seed_from_u64(26);
        let skel = crate::skeleton::tests::random_tree(&mut rng, 7);
        let frames = random_frames(&mut rng, 7, 4);
        let (new_skel, _) = augment_rest_pose(&skel, &frames, 2);
        let (pos, _) = forward_kinematics(&skel, &frames[2]);
        for i in 0..skel.len() {
            if let Some(p) = skel.parent[i] {
                assert!((new_skel.rest_offsets[i] - (pos[i] - pos[p])).norm() < 1e-6);
            }
        }
    }
}
