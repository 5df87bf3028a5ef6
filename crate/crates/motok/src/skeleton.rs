//! Canonical kinematic-tree algebra: forward kinematics, LCA queries, tree
//! reconstruction from an LCA oracle, diameter measurement, and skeleton
//! canonicalization.

use crate::bvh::{euler_to_matrix, matrix_to_euler, BvhDocument, BvhJoint, Channel};
use crate::{Mat3, Vec3};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use thiserror::Error;

/// A canonical kinematic tree. Joints are ordered parent-before-child and
/// exactly one joint (index 0 by construction) has no parent.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub joint_names: Vec<String>,
    pub parent: Vec<Option<usize>>,
    /// Offset from the parent joint; for the root this is the rest-pose root
    /// position.
    pub rest_offsets: Vec<Vec3>,
}

impl Skeleton {
    /// Build a skeleton, validating the tree shape.
    ///
    /// Panics if the lists disagree in length, there is not exactly one root,
    /// or a parent index does not precede its child.
    pub fn new(joint_names: Vec<String>, parent: Vec<Option<usize>>, rest_offsets: Vec<Vec3>) -> Self {
        assert_eq!(joint_names.len(), parent.len());
        assert_eq!(joint_names.len(), rest_offsets.len());
        assert!(!joint_names.is_empty(), "skeleton needs at least one joint");
        let roots = parent.iter().filter(|p| p.is_none()).count();
        assert_eq!(roots, 1, "skeleton must have exactly one root");
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                assert!(*p < i, "joints must be ordered parent-before-child");
            }
        }
        Skeleton {
            joint_names,
            parent,
            rest_offsets,
        }
    }

    pub fn len(&self) -> usize {
        self.joint_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint_names.is_empty()
    }

    pub fn root(&self) -> usize {
        self.parent.iter().position(|p| p.is_none()).unwrap()
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.parent[j] == Some(i)).collect()
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        !self.parent.iter().any(|p| *p == Some(i))
    }

    /// Path from the root to joint `i`, inclusive.
    pub fn path_from_root(&self, i: usize) -> Vec<usize> {
        let mut path = vec![i];
        let mut cur = i;
        while let Some(p) = self.parent[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Rest-pose global joint positions (identity pose, root at its offset).
    pub fn rest_positions(&self) -> Vec<Vec3> {
        let mut pos = vec![Vec3::zeros(); self.len()];
        for i in 0..self.len() {
            pos[i] = match self.parent[i] {
                Some(p) => pos[p] + self.rest_offsets[i],
                None => self.rest_offsets[i],
            };
        }
        pos
    }

    /// Content hash covering names, topology, and offsets.
    pub fn content_hash(&self) -> u64 {
        let mut h = Sha256::new();
        for (i, name) in self.joint_names.iter().enumerate() {
            h.update(name.as_bytes());
            h.update([0u8]);
            match self.parent[i] {
                Some(p) => h.update((p as u64 + 1).to_le_bytes()),
                None => h.update(0u64.to_le_bytes()),
            }
            for c in 0..3 {
                h.update(self.rest_offsets[i][c].to_le_bytes());
            }
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// One pose: world root position plus parent-relative joint rotations.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFrame {
    pub root_position: Vec3,
    pub local_rotations: Vec<Mat3>,
}

impl PoseFrame {
    pub fn rest(num_joints: usize) -> Self {
        PoseFrame {
            root_position: Vec3::zeros(),
            local_rotations: vec![Mat3::identity(); num_joints],
        }
    }

    /// Maximum orthonormality defect over the frame's rotations.
    pub fn max_rotation_defect(&self) -> f64 {
        self.local_rotations
            .iter()
            .map(|r| (r.transpose() * r - Mat3::identity()).norm())
            .fold(0.0, f64::max)
    }
}

/// Compose local transforms down the tree.
///
/// The root takes its world position from the frame and its own local
/// rotation; every other joint composes its parent's global rotation with its
/// local one and advances by the rotated rest offset.
pub fn forward_kinematics(skel: &Skeleton, frame: &PoseFrame) -> (Vec<Vec3>, Vec<Mat3>) {
    assert_eq!(frame.local_rotations.len(), skel.len());
    let mut pos = vec![Vec3::zeros(); skel.len()];
    let mut rot = vec![Mat3::identity(); skel.len()];
    for i in 0..skel.len() {
        match skel.parent[i] {
            None => {
                pos[i] = frame.root_position;
                rot[i] = frame.local_rotations[i];
            }
            Some(p) => {
                rot[i] = rot[p] * frame.local_rotations[i];
                pos[i] = pos[p] + rot[p] * skel.rest_offsets[i];
            }
        }
    }
    (pos, rot)
}

/// Lowest common ancestor of joints `i` and `j`; a node is its own ancestor.
pub fn lca(skel: &Skeleton, i: usize, j: usize) -> usize {
    let depth = |mut v: usize| {
        let mut d = 0;
        while let Some(p) = skel.parent[v] {
            v = p;
            d += 1;
        }
        d
    };
    let (mut a, mut b) = (i, j);
    let (mut da, mut db) = (depth(a), depth(b));
    while da > db {
        a = skel.parent[a].unwrap();
        da -= 1;
    }
    while db > da {
        b = skel.parent[b].unwrap();
        db -= 1;
    }
    while a != b {
        a = skel.parent[a].unwrap();
        b = skel.parent[b].unwrap();
    }
    a
}

#[derive(Debug, Error)]
pub enum LcaReconstructError {
    #[error("LCA oracle is inconsistent: no node passes the root test in group {group:?}")]
    Inconsistent { group: Vec<usize> },
}

/// Rebuild the unique tree whose pairwise LCA function matches `oracle`.
///
/// Works over arbitrary node ids. The procedure finds the group's root (the
/// node that is the LCA of itself with every other member), partitions the
/// rest into child subtrees (two nodes share a subtree iff their LCA is not
/// the root), identifies each subtree's local root as a direct child, and
/// recurses.
pub fn reconstruct_tree_from_lca<F>(
    node_ids: &[usize],
    oracle: F,
) -> Result<BTreeMap<usize, Option<usize>>, LcaReconstructError>
where
    F: Fn(usize, usize) -> usize,
{
    let mut parents = BTreeMap::new();
    if node_ids.is_empty() {
        return Ok(parents);
    }
    let mut group: Vec<usize> = node_ids.to_vec();
    group.sort_unstable();
    group.dedup();
    solve_group(&group, None, &oracle, &mut parents)?;
    Ok(parents)
}

fn solve_group<F>(
    group: &[usize],
    parent_of_root: Option<usize>,
    oracle: &F,
    parents: &mut BTreeMap<usize, Option<usize>>,
) -> Result<(), LcaReconstructError>
where
    F: Fn(usize, usize) -> usize,
{
    let root = group
        .iter()
        .copied()
        .find(|&r| group.iter().all(|&v| oracle(r, v) == r))
        .ok_or_else(|| LcaReconstructError::Inconsistent {
            group: group.to_vec(),
        })?;
    parents.insert(root, parent_of_root);

    let rest: Vec<usize> = group.iter().copied().filter(|&v| v != root).collect();
    if rest.is_empty() {
        return Ok(());
    }
    // Union nodes whose LCA is below the root; components are child subtrees.
    let mut comp: Vec<usize> = (0..rest.len()).collect();
    fn find(comp: &mut Vec<usize>, i: usize) -> usize {
        if comp[i] != i {
            let r = find(comp, comp[i]);
            comp[i] = r;
            r
        } else {
            i
        }
    }
    for a in 0..rest.len() {
        for b in (a + 1)..rest.len() {
            if oracle(rest[a], rest[b]) != root {
                let (ra, rb) = (find(&mut comp, a), find(&mut comp, b));
                if ra != rb {
                    comp[ra] = rb;
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..rest.len() {
        let r = find(&mut comp, i);
        groups.entry(r).or_default().push(rest[i]);
    }
    for (_, child_group) in groups {
        solve_group(&child_group, Some(root), oracle, parents)?;
    }
    Ok(())
}

/// Length of the longest kinematic chain: the maximum over leaves of the sum
/// of offset norms along the root-to-leaf path. The root offset is excluded.
pub fn skeleton_diameter(skel: &Skeleton) -> f64 {
    let mut chain = vec![0.0f64; skel.len()];
    let mut best = 0.0f64;
    for i in 0..skel.len() {
        chain[i] = match skel.parent[i] {
            Some(p) => chain[p] + skel.rest_offsets[i].norm(),
            None => 0.0,
        };
        if skel.is_leaf(i) {
            best = best.max(chain[i]);
        }
    }
    best
}

/// How to treat translation channels on non-root joints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MidchainPolicy {
    /// Fold constant translations into the rest offset; reject varying ones.
    #[default]
    FoldConstant,
    /// Reject any non-root translation channel outright.
    Reject,
}

#[derive(Debug, Clone)]
pub struct CanonicalizeConfig {
    /// Reject when the longest bone exceeds this multiple of the median bone
    /// length.
    pub bone_ratio: f64,
    pub midchain_policy: MidchainPolicy,
    /// Per-frame deviation below which a mid-chain translation counts as
    /// constant.
    pub fold_tolerance: f64,
    /// Optional joint name to re-root the hierarchy at before normalization.
    pub reroot_at: Option<String>,
}

impl Default for CanonicalizeConfig {
    fn default() -> Self {
        CanonicalizeConfig {
            bone_ratio: 10.0,
            midchain_policy: MidchainPolicy::FoldConstant,
            fold_tolerance: 1e-6,
            reroot_at: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum Rejection {
    #[error("abnormal bone length at joint {joint:?}: {length:.6} exceeds {limit:.6}")]
    AbnormalBoneLength {
        joint: String,
        length: f64,
        limit: f64,
    },
    #[error("joint {joint:?} has a frame-varying translation (max deviation {max_deviation:.6})")]
    VaryingMidchainTranslation { joint: String, max_deviation: f64 },
    #[error("joint {joint:?} carries translation channels and the policy rejects them")]
    MidchainTranslationPresent { joint: String },
    #[error("empty skeleton after end-site pruning")]
    EmptySkeleton,
    #[error("skeleton diameter is zero; cannot normalize scale")]
    ZeroDiameter,
    #[error("re-root joint {name:?} not found")]
    RerootJointNotFound { name: String },
}

/// A canonicalized sequence: unit-diameter skeleton, root-only translation.
#[derive(Debug, Clone)]
pub struct Canonicalized {
    pub skeleton: Skeleton,
    pub frames: Vec<PoseFrame>,
    pub frame_time: f64,
    /// Uniform scale that was applied (1 / original diameter).
    pub scale: f64,
}

/// Canonicalize a parsed document: prune end sites, fold or reject mid-chain
/// translations, optionally re-root, screen abnormal bone lengths, and scale
/// the sequence to unit diameter.
pub fn canonicalize(doc: &BvhDocument, config: &CanonicalizeConfig) -> Result<Canonicalized, Rejection> {
    // Map document joints (minus end sites) onto skeleton indices. File order
    // already lists parents before children.
    let mut doc_to_skel = vec![usize::MAX; doc.joints.len()];
    let mut names = Vec::new();
    let mut parent = Vec::new();
    let mut offsets = Vec::new();
    for (di, j) in doc.joints.iter().enumerate() {
        if j.is_end_site {
            continue;
        }
        doc_to_skel[di] = names.len();
        names.push(j.name.clone());
        parent.push(j.parent.map(|p| doc_to_skel[p]));
        offsets.push(Vec3::new(j.offset[0], j.offset[1], j.offset[2]));
    }
    if names.is_empty() {
        return Err(Rejection::EmptySkeleton);
    }

    let chan_offsets = doc.channel_offsets();
    let skel_count = names.len();

    // Per-joint, per-frame translation channel values (zero when absent).
    let mut translations = vec![vec![Vec3::zeros(); doc.frame_count]; skel_count];
    let mut rotations = vec![vec![Mat3::identity(); doc.frame_count]; skel_count];
    for (di, j) in doc.joints.iter().enumerate() {
        if j.is_end_site {
            continue;
        }
        let si = doc_to_skel[di];
        let base = chan_offsets[di];
        for (t, row) in doc.frames.iter().enumerate() {
            let mut trans = Vec3::zeros();
            let mut rot = Mat3::identity();
            for (ci, ch) in j.channels.iter().enumerate() {
                let v = row[base + ci];
                if ch.is_rotation() {
                    rot *= crate::bvh::axis_rotation(ch.axis(), v.to_radians());
                } else {
                    trans[ch.axis()] = v;
                }
            }
            translations[si][t] = trans;
            rotations[si][t] = rot;
        }
    }

    // Fold or reject mid-chain translations; root translation becomes the
    // world position.
    let mut root_positions = vec![Vec3::zeros(); doc.frame_count];
    for si in 0..skel_count {
        let has_pos_channels = {
            let di = doc
                .joints
                .iter()
                .enumerate()
                .position(|(d, j)| !j.is_end_site && doc_to_skel[d] == si)
                .unwrap();
            doc.joints[di].channels.iter().any(|c| !c.is_rotation())
        };
        if parent[si].is_none() {
            for t in 0..doc.frame_count {
                root_positions[t] = offsets[si] + translations[si][t];
            }
            continue;
        }
        if !has_pos_channels {
            continue;
        }
        match config.midchain_policy {
            MidchainPolicy::Reject => {
                return Err(Rejection::MidchainTranslationPresent {
                    joint: names[si].clone(),
                })
            }
            MidchainPolicy::FoldConstant => {
                let mean = translations[si]
                    .iter()
                    .fold(Vec3::zeros(), |acc, t| acc + t)
                    / doc.frame_count.max(1) as f64;
                let max_dev = translations[si]
                    .iter()
                    .map(|t| (t - mean).amax())
                    .fold(0.0, f64::max);
                if max_dev > config.fold_tolerance {
                    return Err(Rejection::VaryingMidchainTranslation {
                        joint: names[si].clone(),
                        max_deviation: max_dev,
                    });
                }
                offsets[si] += mean;
            }
        }
    }

    let mut skeleton = Skeleton::new(names, parent, offsets);
    let mut frames: Vec<PoseFrame> = (0..doc.frame_count)
        .map(|t| PoseFrame {
            root_position: root_positions[t],
            local_rotations: (0..skel_count).map(|si| rotations[si][t]).collect(),
        })
        .collect();
    if frames.is_empty() {
        frames.push(PoseFrame::rest(skel_count));
    }

    if let Some(name) = &config.reroot_at {
        let (s, f) = reroot(&skeleton, &frames, name)?;
        skeleton = s;
        frames = f;
    }

    // Bone-length screen: the longest bone against the median bone. (The
    // chain diameter cannot flag a single corrupt bone because the bone is
    // itself part of the longest chain.)
    let bones: Vec<f64> = (0..skeleton.len())
        .filter(|&i| skeleton.parent[i].is_some())
        .map(|i| skeleton.rest_offsets[i].norm())
        .collect();
    if !bones.is_empty() {
        let mut sorted = bones.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Lower median, so one corrupt bone cannot drag the baseline up.
        let median = sorted[(sorted.len() - 1) / 2];
        if median > 0.0 {
            for (i, len) in (0..skeleton.len())
                .filter(|&i| skeleton.parent[i].is_some())
                .zip(bones.iter())
            {
                if *len > config.bone_ratio * median {
                    return Err(Rejection::AbnormalBoneLength {
                        joint: skeleton.joint_names[i].clone(),
                        length: *len,
                        limit: config.bone_ratio * median,
                    });
                }
            }
        }
    }

    let diameter = skeleton_diameter(&skeleton);
    if diameter <= 1e-12 {
        return Err(Rejection::ZeroDiameter);
    }
    // Skip rescaling for already-normalized input so canonicalization is
    // byte-stable under repetition.
    let scale = if (diameter - 1.0).abs() <= 1e-6 {
        1.0
    } else {
        1.0 / diameter
    };
    if scale != 1.0 {
        for o in &mut skeleton.rest_offsets {
            *o *= scale;
        }
        for f in &mut frames {
            f.root_position *= scale;
        }
    }

    Ok(Canonicalized {
        skeleton,
        frames,
        frame_time: doc.frame_time,
        scale,
    })
}

/// Re-root the hierarchy at the named joint, re-orienting reversed edges and
/// re-deriving local rotations from the preserved global ones.
///
/// Joint positions in the new root's original subtree are reproduced exactly.
/// Joints along the reversed path toward the old root are exact only when the
/// local rotation across each reversed edge is constant — the dummy-root case
/// this exists for, where a placeholder root carries global motion and the
/// anatomical root sits rigidly under it.
pub fn reroot(
    skel: &Skeleton,
    frames: &[PoseFrame],
    new_root_name: &str,
) -> Result<(Skeleton, Vec<PoseFrame>), Rejection> {
    let g = skel
        .joint_names
        .iter()
        .position(|n| n == new_root_name)
        .ok_or_else(|| Rejection::RerootJointNotFound {
            name: new_root_name.to_string(),
        })?;

    // Re-orient: edges along the path from g to the old root flip direction.
    let mut new_parent: Vec<Option<usize>> = skel.parent.clone();
    let mut cur = g;
    let mut prev: Option<usize> = None;
    loop {
        let up = skel.parent[cur];
        new_parent[cur] = prev;
        prev = Some(cur);
        match up {
            Some(p) => cur = p,
            None => break,
        }
    }

    // Re-index depth-first from the new root so parents precede children.
    let mut order = Vec::with_capacity(skel.len());
    let mut stack = vec![g];
    while let Some(v) = stack.pop() {
        order.push(v);
        let mut kids: Vec<usize> = (0..skel.len()).filter(|&c| new_parent[c] == Some(v)).collect();
        kids.reverse();
        stack.extend(kids);
    }
    let mut old_to_new = vec![usize::MAX; skel.len()];
    for (ni, &oi) in order.iter().enumerate() {
        old_to_new[oi] = ni;
    }

    let rest = skel.rest_positions();
    let names = order.iter().map(|&o| skel.joint_names[o].clone()).collect();
    let parents = order
        .iter()
        .map(|&o| new_parent[o].map(|p| old_to_new[p]))
        .collect();
    let offsets = order
        .iter()
        .map(|&o| match new_parent[o] {
            Some(p) => rest[o] - rest[p],
            None => rest[o],
        })
        .collect();
    let new_skel = Skeleton::new(names, parents, offsets);

    let mut new_frames = Vec::with_capacity(frames.len());
    for f in frames {
        let (pos, rot) = forward_kinematics(skel, f);
        let local: Vec<Mat3> = order
            .iter()
            .map(|&o| match new_parent[o] {
                Some(p) => rot[p].transpose() * rot[o],
                None => rot[o],
            })
            .collect();
        new_frames.push(PoseFrame {
            root_position: pos[g],
            local_rotations: local,
        });
    }
    Ok((new_skel, new_frames))
}

/// Serialize a canonicalized sequence back to a BVH document.
///
/// Rotation channels use the given axis order for every joint; leaf joints
/// get a zero-offset end site so the hierarchy stays well formed.
pub fn to_bvh(
    skel: &Skeleton,
    frames: &[PoseFrame],
    frame_time: f64,
    rotation_order: [usize; 3],
) -> BvhDocument {
    let axis_channel = |a: usize| match a {
        0 => Channel::Xrotation,
        1 => Channel::Yrotation,
        2 => Channel::Zrotation,
        _ => unreachable!(),
    };
    let rot_channels: Vec<Channel> = rotation_order.iter().map(|&a| axis_channel(a)).collect();

    // Emit joints depth-first so BVH nesting matches, remembering the order.
    let mut emit_order = Vec::with_capacity(skel.len());
    let mut stack = vec![skel.root()];
    while let Some(v) = stack.pop() {
        emit_order.push(v);
        let mut kids = skel.children(v);
        kids.reverse();
        stack.extend(kids);
    }
    let mut skel_to_doc = vec![usize::MAX; skel.len()];
    let mut joints: Vec<BvhJoint> = Vec::new();
    for &si in &emit_order {
        skel_to_doc[si] = joints.len();
        let mut channels = Vec::new();
        if skel.parent[si].is_none() {
            channels.extend([Channel::Xposition, Channel::Yposition, Channel::Zposition]);
        }
        channels.extend(rot_channels.iter().copied());
        joints.push(BvhJoint {
            name: skel.joint_names[si].clone(),
            parent: skel.parent[si].map(|p| skel_to_doc[p]),
            offset: [
                skel.rest_offsets[si][0],
                skel.rest_offsets[si][1],
                skel.rest_offsets[si][2],
            ],
            channels,
            is_end_site: false,
        });
        if skel.is_leaf(si) {
            joints.push(BvhJoint {
                name: format!("{}_end", skel.joint_names[si]),
                parent: Some(skel_to_doc[si]),
                offset: [0.0, 0.0, 0.0],
                channels: Vec::new(),
                is_end_site: true,
            });
        }
    }
    let mut rows = Vec::with_capacity(frames.len());
    for f in frames {
        let mut row = Vec::new();
        for &si in &emit_order {
            if skel.parent[si].is_none() {
                row.extend([f.root_position[0], f.root_position[1], f.root_position[2]]);
            }
            let angles = matrix_to_euler(&f.local_rotations[si], rotation_order);
            row.extend(angles);
        }
        rows.push(row);
    }

    BvhDocument {
        joints,
        frame_count: rows.len(),
        frame_time,
        frames: rows,
    }
}

/// Reverse of [`to_bvh`] composition check helper: build matrices for a row.
pub fn pose_from_canonical_row(
    skel: &Skeleton,
    row: &[f64],
    rotation_order: [usize; 3],
) -> PoseFrame {
    let mut local = Vec::with_capacity(skel.len());
    let mut cursor = 0;
    let mut root_position = Vec3::zeros();
    for si in 0..skel.len() {
        if skel.parent[si].is_none() {
            root_position = Vec3::new(row[cursor], row[cursor + 1], row[cursor + 2]);
            cursor += 3;
        }
        let angles = [row[cursor], row[cursor + 1], row[cursor + 2]];
        cursor += 3;
        local.push(euler_to_matrix(angles, rotation_order));
    }
    PoseFrame {
        root_position,
        local_rotations: local,
    }
}
