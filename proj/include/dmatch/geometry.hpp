#pragma once

#include <Eigen/Dense>
#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dmatch/common.hpp"

namespace dmatch {

// Pixel coordinates, origin top-left, x rightward, y downward.
struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

// 3x3 projective transform acting on homogeneous pixel coordinates.
// Kept normalized so m(2,2) == 1 whenever that entry is nonzero.
struct Homography {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();

    static Homography identity() { return {}; }
    static Homography translation(double tx, double ty);

    // Normalizes the bottom-right entry to 1 when it is nonzero.
    Homography normalized() const;
    Homography inverse() const;  // throws NumericError when not invertible
    bool invertible(double det_eps = 1e-12) const;

    // Maps a single point; throws NumericError when the homogeneous
    // w-component vanishes (|w| < 1e-12).
    Point2 apply(const Point2& p) const;

    // 2x2 Jacobian of the induced planar map at p.
    Eigen::Matrix2d jacobian(const Point2& p) const;
};

// Paired pixel coordinates linking a source and a target image.
struct CorrespondenceSet {
    std::vector<Point2> src_pts;
    std::vector<Point2> tgt_pts;
    std::array<int, 2> image_size_src{0, 0};  // {W, H}
    std::array<int, 2> image_size_tgt{0, 0};
    // Ground-truth warp, stored for synthetically generated pairs.
    std::optional<Homography> homography;

    std::size_t size() const { return src_pts.size(); }

    std::string to_json_string() const;
    static CorrespondenceSet from_json_string(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static CorrespondenceSet load(const std::filesystem::path& path);
};

struct PerturbationConfig {
    double corner_jitter_frac = 0.15;  // of min(W, H)
    double translation_frac = 0.10;    // of (W, H)
    std::uint64_t seed = 0;

    void validate() const;  // fractions in [0, 0.5)
};

// Local-Jacobian singular-value window outside which a warped pair counts
// as too distorted to keep.
struct DistortionBounds {
    double sv_min = 0.2;
    double sv_max = 5.0;
};

enum class RansacModelKind { homography, fundamental };

struct RansacConfig {
    RansacModelKind model_kind = RansacModelKind::homography;
    double threshold_px = 5.0;
    int max_iters = 2000;
    double confidence = 0.999;
    std::uint64_t seed = 0;

    void validate() const;
};

struct RansacResult {
    std::vector<bool> inlier_mask;
    Eigen::Matrix3d model = Eigen::Matrix3d::Identity();
    RansacModelKind model_kind = RansacModelKind::homography;
    int n_inlier = 0;
    bool found_consensus = false;
    std::string diagnostic;
};

// Batch warp. Points whose homogeneous w-component vanishes are flagged
// invalid instead of aborting the batch.
struct WarpResult {
    std::vector<Point2> pts;
    std::vector<bool> valid;
};
WarpResult apply_homography(const Homography& h, const std::vector<Point2>& pts);

// Random viewpoint simulation: jitters the four image corners by uniform
// offsets in +-corner_jitter_frac*min(W,H), composes a uniform random
// translation in +-translation_frac*(W,H), and solves the exact 4-point
// transform. Resamples (bounded) when the jittered quad degenerates.
Homography sample_perspective_transform(const PerturbationConfig& cfg,
                                        std::array<int, 2> image_size, Rng& rng);

// Uniformly samples source pixels and warps them through h. Pairs whose
// target leaves the image or whose local Jacobian singular values fall
// outside `bounds` are discarded, so the result may hold fewer than
// n_points pairs (possibly zero).
CorrespondenceSet generate_correspondences(const Homography& h,
                                           std::array<int, 2> image_size,
                                           int n_points, Rng& rng,
                                           const DistortionBounds& bounds = {});

// Normalized (Hartley) direct linear transform, least squares over all
// pairs. Requires >= 4 pairs in non-degenerate configuration.
Homography estimate_homography_dlt(const CorrespondenceSet& matches);

// Normalized 8-point algorithm with rank-2 enforcement.
Eigen::Matrix3d estimate_fundamental_8pt(const CorrespondenceSet& matches);

// Seeded, permutation-invariant RANSAC. Inliers are pairs with forward
// reprojection error (homography) or symmetric epipolar point-line
// distance (fundamental) within threshold_px of the model refit on the
// final consensus set.
RansacResult ransac_filter(const CorrespondenceSet& matches, const RansacConfig& cfg);

}  // namespace dmatch
