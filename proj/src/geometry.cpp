#include "dmatch/geometry.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace dmatch {

using json = nlohmann::json;

namespace {

constexpr double kHomogeneousEps = 1e-12;

Eigen::Vector3d to_h(const Point2& p) { return {p.x, p.y, 1.0}; }

// Hartley normalization: centroid to origin, mean distance sqrt(2).
Eigen::Matrix3d normalizing_transform(const std::vector<Point2>& pts) {
    double cx = 0, cy = 0;
    for (const auto& p : pts) {
        cx += p.x;
        cy += p.y;
    }
    cx /= static_cast<double>(pts.size());
    cy /= static_cast<double>(pts.size());
    double mean_dist = 0;
    for (const auto& p : pts) mean_dist += std::hypot(p.x - cx, p.y - cy);
    mean_dist /= static_cast<double>(pts.size());
    const double scale = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
    Eigen::Matrix3d t;
    t << scale, 0, -scale * cx, 0, scale, -scale * cy, 0, 0, 1;
    return t;
}

double reprojection_error(const Eigen::Matrix3d& h, const Point2& s, const Point2& t) {
    const Eigen::Vector3d q = h * to_h(s);
    if (std::abs(q(2)) < kHomogeneousEps) return std::numeric_limits<double>::infinity();
    return std::hypot(q(0) / q(2) - t.x, q(1) / q(2) - t.y);
}

// Symmetric epipolar point-line distance, in pixels.
double epipolar_error(const Eigen::Matrix3d& f, const Point2& s, const Point2& t) {
    const Eigen::Vector3d x = to_h(s), xp = to_h(t);
    const Eigen::Vector3d l = f * x;         // line in target image
    const Eigen::Vector3d lp = f.transpose() * xp;  // line in source image
    const double val = std::abs(xp.dot(l));
    const double n1 = std::hypot(l(0), l(1));
    const double n2 = std::hypot(lp(0), lp(1));
    if (n1 < kHomogeneousEps || n2 < kHomogeneousEps)
        return std::numeric_limits<double>::infinity();
    return std::max(val / n1, val / n2);
}

Eigen::Matrix3d fit_homography(const std::vector<Point2>& src, const std::vector<Point2>& tgt);

// Sorted view of the pairs so the estimate does not depend on input order.
std::vector<std::size_t> canonical_order(const CorrespondenceSet& m) {
    std::vector<std::size_t> idx(m.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const auto key = [&](std::size_t i) {
            return std::array<double, 4>{m.src_pts[i].x, m.src_pts[i].y,
                                         m.tgt_pts[i].x, m.tgt_pts[i].y};
        };
        return key(a) < key(b);
    });
    return idx;
}

}  // namespace

Homography Homography::translation(double tx, double ty) {
    Homography h;
    h.m(0, 2) = tx;
    h.m(1, 2) = ty;
    return h;
}

Homography Homography::normalized() const {
    Homography out = *this;
    if (std::abs(m(2, 2)) > kHomogeneousEps) out.m /= m(2, 2);
    return out;
}

bool Homography::invertible(double det_eps) const {
    return std::abs(m.determinant()) > det_eps;
}

Homography Homography::inverse() const {
    if (!invertible()) throw NumericError("homography is not invertible");
    Homography h;
    h.m = m.inverse();
    return h.normalized();
}

Point2 Homography::apply(const Point2& p) const {
    const Eigen::Vector3d q = m * to_h(p);
    if (std::abs(q(2)) < kHomogeneousEps)
        throw NumericError("point maps to infinity under homography");
    return {q(0) / q(2), q(1) / q(2)};
}

Eigen::Matrix2d Homography::jacobian(const Point2& p) const {
    const Eigen::Vector3d q = m * to_h(p);
    const double w = q(2);
    if (std::abs(w) < kHomogeneousEps)
        throw NumericError("jacobian undefined: point maps to infinity");
    const double u = q(0) / w, v = q(1) / w;
    Eigen::Matrix2d j;
    j(0, 0) = (m(0, 0) - u * m(2, 0)) / w;
    j(0, 1) = (m(0, 1) - u * m(2, 1)) / w;
    j(1, 0) = (m(1, 0) - v * m(2, 0)) / w;
    j(1, 1) = (m(1, 1) - v * m(2, 1)) / w;
    return j;
}

void PerturbationConfig::validate() const {
    if (corner_jitter_frac < 0 || corner_jitter_frac >= 0.5)
        throw ConfigError("corner_jitter_frac must lie in [0, 0.5)");
    if (translation_frac < 0 || translation_frac >= 0.5)
        throw ConfigError("translation_frac must lie in [0, 0.5)");
}

void RansacConfig::validate() const {
    if (threshold_px <= 0) throw ConfigError("ransac threshold_px must be > 0");
    if (confidence <= 0 || confidence >= 1)
        throw ConfigError("ransac confidence must lie in (0, 1)");
    if (max_iters < 1) throw ConfigError("ransac max_iters must be >= 1");
}

WarpResult apply_homography(const Homography& h, const std::vector<Point2>& pts) {
    WarpResult out;
    out.pts.resize(pts.size());
    out.valid.resize(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const Eigen::Vector3d q = h.m * to_h(pts[i]);
        if (std::abs(q(2)) < kHomogeneousEps) {
            out.pts[i] = {0, 0};
            out.valid[i] = false;
        } else {
            out.pts[i] = {q(0) / q(2), q(1) / q(2)};
            out.valid[i] = true;
        }
    }
    return out;
}

Homography sample_perspective_transform(const PerturbationConfig& cfg,
                                        std::array<int, 2> image_size, Rng& rng) {
    cfg.validate();
    const double w = image_size[0], h = image_size[1];
    if (w <= 0 || h <= 0) throw ConfigError("image_size must be positive");

    const double jitter = cfg.corner_jitter_frac * std::min(w, h);
    const std::array<Point2, 4> corners{{{0, 0}, {w, 0}, {w, h}, {0, h}}};

    constexpr int kMaxAttempts = 32;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        std::uniform_real_distribution<double> ju(-jitter, jitter);
        std::array<Point2, 4> moved;
        for (int c = 0; c < 4; ++c) {
            const double dx = jitter > 0 ? ju(rng) : 0.0;
            const double dy = jitter > 0 ? ju(rng) : 0.0;
            moved[c] = {corners[c].x + dx, corners[c].y + dy};
        }
        std::uniform_real_distribution<double> txu(-cfg.translation_frac * w,
                                                   cfg.translation_frac * w);
        std::uniform_real_distribution<double> tyu(-cfg.translation_frac * h,
                                                   cfg.translation_frac * h);
        const double tx = cfg.translation_frac > 0 ? txu(rng) : 0.0;
        const double ty = cfg.translation_frac > 0 ? tyu(rng) : 0.0;
        for (auto& p : moved) {
            p.x += tx;
            p.y += ty;
        }

        // Convexity (consistent turn direction) and non-degeneracy of the quad.
        bool ok = true;
        double min_cross = std::numeric_limits<double>::max();
        for (int c = 0; c < 4 && ok; ++c) {
            const Point2& a = moved[c];
            const Point2& b = moved[(c + 1) % 4];
            const Point2& d = moved[(c + 2) % 4];
            const double cross =
                (b.x - a.x) * (d.y - b.y) - (b.y - a.y) * (d.x - b.x);
            if (cross <= 0) ok = false;  // corners are listed clockwise in image coords
            min_cross = std::min(min_cross, std::abs(cross));
        }
        if (!ok || min_cross < 1e-6 * w * h) continue;

        CorrespondenceSet quad;
        quad.src_pts.assign(corners.begin(), corners.end());
        quad.tgt_pts.assign(moved.begin(), moved.end());
        try {
            Homography h4 = estimate_homography_dlt(quad);
            if (!h4.invertible()) continue;
            return h4;
        } catch (const NumericError&) {
            continue;
        }
    }
    throw NumericError("could not sample a non-degenerate perspective transform");
}

CorrespondenceSet generate_correspondences(const Homography& h,
                                           std::array<int, 2> image_size,
                                           int n_points, Rng& rng,
                                           const DistortionBounds& bounds) {
    if (n_points < 1) throw ConfigError("n_points must be >= 1");
    if (!h.invertible()) throw NumericError("homography is not invertible");
    const double w = image_size[0], hgt = image_size[1];

    CorrespondenceSet out;
    out.image_size_src = image_size;
    out.image_size_tgt = image_size;
    out.homography = h;
    std::uniform_real_distribution<double> ux(0.0, w - 1.0), uy(0.0, hgt - 1.0);
    for (int i = 0; i < n_points; ++i) {
        const Point2 s{ux(rng), uy(rng)};
        const Eigen::Vector3d q = h.m * to_h(s);
        if (std::abs(q(2)) < kHomogeneousEps) continue;
        const Point2 t{q(0) / q(2), q(1) / q(2)};
        if (t.x < 0 || t.x > w - 1 || t.y < 0 || t.y > hgt - 1) continue;
        const Eigen::JacobiSVD<Eigen::Matrix2d> svd(h.jacobian(s));
        const double s0 = svd.singularValues()(0), s1 = svd.singularValues()(1);
        if (s0 > bounds.sv_max || s1 < bounds.sv_min) continue;
        out.src_pts.push_back(s);
        out.tgt_pts.push_back(t);
    }
    return out;
}

namespace {

Eigen::Matrix3d fit_homography(const std::vector<Point2>& src, const std::vector<Point2>& tgt) {
    const Eigen::Matrix3d ts = normalizing_transform(src);
    const Eigen::Matrix3d tt = normalizing_transform(tgt);
    const std::size_t n = src.size();
    Eigen::MatrixXd a(2 * n, 9);
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d p = ts * to_h(src[i]);
        const Eigen::Vector3d q = tt * to_h(tgt[i]);
        const double x = p(0), y = p(1), u = q(0), v = q(1);
        a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
        a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv(7) < 1e-9 * sv(0))
        throw NumericError("degenerate point configuration for homography estimation");
    const Eigen::VectorXd hv = svd.matrixV().col(8);
    Eigen::Matrix3d hn;
    hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
    return tt.inverse() * hn * ts;
}

}  // namespace

Homography estimate_homography_dlt(const CorrespondenceSet& matches) {
    if (matches.size() < 4)
        throw ConfigError("homography estimation needs >= 4 pairs");
    if (matches.src_pts.size() != matches.tgt_pts.size())
        throw ConfigError("correspondence set has unequal src/tgt lengths");
    Homography h;
    h.m = fit_homography(matches.src_pts, matches.tgt_pts);
    h = h.normalized();
    if (!h.invertible())
        throw NumericError("estimated homography is singular");
    return h;
}

Eigen::Matrix3d estimate_fundamental_8pt(const CorrespondenceSet& matches) {
    if (matches.size() < 8)
        throw ConfigError("fundamental estimation needs >= 8 pairs");
    const Eigen::Matrix3d ts = normalizing_transform(matches.src_pts);
    const Eigen::Matrix3d tt = normalizing_transform(matches.tgt_pts);
    const std::size_t n = matches.size();
    Eigen::MatrixXd a(n, 9);
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d p = ts * to_h(matches.src_pts[i]);
        const Eigen::Vector3d q = tt * to_h(matches.tgt_pts[i]);
        const double x = p(0), y = p(1), u = q(0), v = q(1);
        a.row(i) << u * x, u * y, u, v * x, v * y, v, x, y, 1;
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    if (svd.singularValues()(7) < 1e-9 * svd.singularValues()(0))
        throw NumericError("degenerate point configuration for fundamental estimation");
    const Eigen::VectorXd fv = svd.matrixV().col(8);
    Eigen::Matrix3d fn;
    fn << fv(0), fv(1), fv(2), fv(3), fv(4), fv(5), fv(6), fv(7), fv(8);
    // Enforce rank 2.
    Eigen::JacobiSVD<Eigen::Matrix3d> fsvd(fn, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d s = fsvd.singularValues();
    s(2) = 0;
    fn = fsvd.matrixU() * s.asDiagonal() * fsvd.matrixV().transpose();
    Eigen::Matrix3d f = tt.transpose() * fn * ts;
    const double norm = f.norm();
    if (norm < kHomogeneousEps) throw NumericError("fundamental estimate vanished");
    return f / norm;
}

RansacResult ransac_filter(const CorrespondenceSet& matches, const RansacConfig& cfg) {
    cfg.validate();
    const bool homog = cfg.model_kind == RansacModelKind::homography;
    const std::size_t minimal = homog ? 4 : 8;
    const std::size_t n = matches.size();
    if (matches.src_pts.size() != matches.tgt_pts.size())
        throw ConfigError("correspondence set has unequal src/tgt lengths");
    if (n < minimal)
        throw ConfigError("ransac needs >= " + std::to_string(minimal) + " pairs");

    // Work on a canonically sorted view so the inlier SET does not depend on
    // the order pairs arrive in.
    const std::vector<std::size_t> order = canonical_order(matches);
    std::vector<Point2> src(n), tgt(n);
    for (std::size_t i = 0; i < n; ++i) {
        src[i] = matches.src_pts[order[i]];
        tgt[i] = matches.tgt_pts[order[i]];
    }

    const auto model_error = [&](const Eigen::Matrix3d& model, std::size_t i) {
        return homog ? reprojection_error(model, src[i], tgt[i])
                     : epipolar_error(model, src[i], tgt[i]);
    };
    const auto fit_minimal = [&](const std::vector<std::size_t>& ids,
                                 Eigen::Matrix3d& model) {
        CorrespondenceSet sub;
        for (std::size_t i : ids) {
            sub.src_pts.push_back(src[i]);
            sub.tgt_pts.push_back(tgt[i]);
        }
        try {
            model = homog ? estimate_homography_dlt(sub).m : estimate_fundamental_8pt(sub);
            return true;
        } catch (const Error&) {
            return false;
        }
    };

    Rng rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    Eigen::Matrix3d best_model = Eigen::Matrix3d::Identity();
    std::size_t best_count = 0;
    double best_err_sum = std::numeric_limits<double>::max();
    long adaptive_iters = cfg.max_iters;

    std::vector<std::size_t> sample(minimal);
    for (long iter = 0; iter < adaptive_iters && iter < cfg.max_iters; ++iter) {
        for (std::size_t k = 0; k < minimal; ++k) {
            std::size_t candidate;
            bool fresh;
            do {
                candidate = pick(rng);
                fresh = true;
                for (std::size_t j = 0; j < k; ++j)
                    if (sample[j] == candidate) fresh = false;
            } while (!fresh);
            sample[k] = candidate;
        }
        Eigen::Matrix3d model;
        if (!fit_minimal(sample, model)) continue;
        std::size_t count = 0;
        double err_sum = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double e = model_error(model, i);
            if (e <= cfg.threshold_px) {
                ++count;
                err_sum += e;
            }
        }
        if (count > best_count || (count == best_count && err_sum < best_err_sum)) {
            best_count = count;
            best_err_sum = err_sum;
            best_model = model;
            if (count >= minimal) {
                const double inlier_ratio = static_cast<double>(count) / static_cast<double>(n);
                const double denom = std::log(1.0 - std::pow(inlier_ratio, static_cast<double>(minimal)));
                if (denom < 0) {
                    adaptive_iters = static_cast<long>(
                        std::ceil(std::log(1.0 - cfg.confidence) / denom));
                }
            }
        }
    }

    RansacResult result;
    result.model_kind = cfg.model_kind;
    result.inlier_mask.assign(n, false);
    if (best_count < minimal) {
        result.diagnostic = "no consensus reached: best support " +
                            std::to_string(best_count) + " of " + std::to_string(n);
        return result;
    }

    // Refit on the consensus set, then classify against the refit model.
    CorrespondenceSet consensus;
    for (std::size_t i = 0; i < n; ++i) {
        if (model_error(best_model, i) <= cfg.threshold_px) {
            consensus.src_pts.push_back(src[i]);
            consensus.tgt_pts.push_back(tgt[i]);
        }
    }
    Eigen::Matrix3d final_model = best_model;
    try {
        final_model = homog ? estimate_homography_dlt(consensus).m
                            : estimate_fundamental_8pt(consensus);
    } catch (const Error&) {
        final_model = best_model;  // minimal model remains the best available
    }

    std::vector<bool> sorted_mask(n, false);
    int n_inlier = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (model_error(final_model, i) <= cfg.threshold_px) {
            sorted_mask[i] = true;
            ++n_inlier;
        }
    }
    for (std::size_t i = 0; i < n; ++i) result.inlier_mask[order[i]] = sorted_mask[i];
    result.model = final_model;
    result.n_inlier = n_inlier;
    result.found_consensus = true;
    return result;
}

std::string CorrespondenceSet::to_json_string() const {
    json j;
    j["src"] = json::array();
    j["tgt"] = json::array();
    for (const auto& p : src_pts) j["src"].push_back({p.x, p.y});
    for (const auto& p : tgt_pts) j["tgt"].push_back({p.x, p.y});
    j["size_src"] = {image_size_src[0], image_size_src[1]};
    j["size_tgt"] = {image_size_tgt[0], image_size_tgt[1]};
    if (homography) {
        json rows = json::array();
        for (int r = 0; r < 3; ++r)
            rows.push_back({homography->m(r, 0), homography->m(r, 1), homography->m(r, 2)});
        j["homography"] = rows;
    }
    return j.dump();
}

CorrespondenceSet CorrespondenceSet::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("correspondence JSON parse failure: ") + e.what());
    }
    CorrespondenceSet out;
    try {
        for (const auto& p : j.at("src")) out.src_pts.push_back({p.at(0), p.at(1)});
        for (const auto& p : j.at("tgt")) out.tgt_pts.push_back({p.at(0), p.at(1)});
        out.image_size_src = {j.at("size_src").at(0), j.at("size_src").at(1)};
        out.image_size_tgt = {j.at("size_tgt").at(0), j.at("size_tgt").at(1)};
        if (j.contains("homography")) {
            Homography h;
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) h.m(r, c) = j["homography"].at(r).at(c);
            out.homography = h;
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("correspondence JSON schema violation: ") + e.what());
    }
    if (out.src_pts.size() != out.tgt_pts.size())
        throw ConfigError("correspondence JSON: src/tgt lengths differ");
    return out;
}

void CorrespondenceSet::save(const std::filesystem::path& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f << to_json_string() << "\n";
    if (!f) throw IoError("write failure: " + path.string());
}

CorrespondenceSet CorrespondenceSet::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return from_json_string(ss.str());
}

}  // namespace dmatch
