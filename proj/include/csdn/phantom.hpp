#pragma once

#include "csdn/labels.hpp"
#include "csdn/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace csdn {

/// One annotated stack: frames (1, 3, H, W) in [0, 1], label (1, H, W)
/// with 0 background, 1 wall, 2 lumen.
struct Sample {
    Tensor<float> frames;
    LabelMap label;
    double spacing_mm = 0.02;
    std::string id;
};

/// Filled ellipse {p : (p - center)^T q (p - center) <= 1} in pixel
/// coordinates, pixel (x, y) having its center at (x + 0.5, y + 0.5).
struct Ellipse {
    Eigen::Vector2d center = Eigen::Vector2d::Zero();
    Eigen::Matrix2d q = Eigen::Matrix2d::Identity();

    static Ellipse from_axes(Eigen::Vector2d center, double radius_a, double radius_b, double angle);
    [[nodiscard]] bool contains(const Eigen::Vector2d& p) const
    {
        const Eigen::Vector2d d = p - center;
        return d.dot(q * d) <= 1.0;
    }
    [[nodiscard]] double area() const;
    /// Image under p -> m p + t.
    [[nodiscard]] Ellipse transformed(const Eigen::Matrix2d& m, const Eigen::Vector2d& t) const;
    /// Boundary point at parameter angle theta.
    [[nodiscard]] Eigen::Vector2d boundary_point(double theta) const;
};

/// Angular acoustic shadow cast from the catheter.
struct ShadowWedge {
    double direction = 0.0;    ///< radians
    double half_width = 0.0;   ///< radians
    double start_radius = 0.0; ///< pixels from the catheter center
};

struct PhantomGeometry {
    int size = 0;
    Ellipse eem;
    Ellipse lumen;
    std::vector<ShadowWedge> shadows;
    Eigen::Vector2d catheter = Eigen::Vector2d::Zero();
    double catheter_radius = 0.0;
};

/// Band intensities before speckle.
inline constexpr float kLumenLevel = 0.12f;
inline constexpr float kWallLevel = 0.55f;
inline constexpr float kAdventitiaLevel = 0.35f;
inline constexpr float kShadowFactor = 0.15f;
inline constexpr float kCatheterLevel = 0.05f;

/// Deterministic random vessel geometry. Throws DataError unless size is a
/// positive multiple of 64.
PhantomGeometry phantom_geometry(std::uint64_t seed, int size);

/// Analytic label of a geometry (lumen overrides wall).
LabelMap render_label(const Ellipse& eem, const Ellipse& lumen, int size);

/// Full sample: frame 2 from `phantom_geometry(seed)`, frames 1 and 3 from
/// geometries perturbed by at most 2%, independent gamma speckle per frame.
Sample generate_phantom(std::uint64_t seed, int size);

struct AugmentConfig {
    double translate = 0.1;  ///< fraction of the image size
    double rotate_deg = 180.0;
    double scale_min = 0.9;
    double scale_max = 1.1;
    double shear_deg = 10.0;
    double flip_lr_p = 0.5;
    double flip_ud_p = 0.5;
    double swap_p = 0.5;

    /// All ranges zero and no flips or swap.
    static AugmentConfig identity();
    void validate() const;
};

/// A drawn augmentation: p_out = center + m (p_in - center) + t, flips
/// folded into m.
struct Augmentation {
    Eigen::Matrix2d m = Eigen::Matrix2d::Identity();
    Eigen::Vector2d t = Eigen::Vector2d::Zero();
    bool swap_frames = false;

    [[nodiscard]] bool is_identity() const { return m == Eigen::Matrix2d::Identity() && t.isZero(); }
    /// Affine part as p -> a p + b in absolute pixel coordinates.
    [[nodiscard]] std::pair<Eigen::Matrix2d, Eigen::Vector2d> absolute(int h, int w) const;
};

Augmentation draw_augmentation(std::uint64_t seed, const AugmentConfig& cfg, int size);

/// Frames resampled bilinearly (zero outside), label by nearest neighbour
/// (background outside); frame 2 never moves between channels.
Sample apply_augmentation(const Sample& s, const Augmentation& a);

Sample augment(const Sample& s, std::uint64_t seed, const AugmentConfig& cfg);

} // namespace csdn
