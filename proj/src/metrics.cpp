#include "ssdd/metrics.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <iomanip>
#include <sstream>

namespace ssdd {

namespace {

constexpr std::string_view kModule = "metrics";

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

Eigen::MatrixXd as_matrix(const FeatureStats& s) {
    const int d = s.dim();
    Eigen::MatrixXd m(d, d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) m(i, j) = s.covariance[static_cast<std::size_t>(i) * d + j];
    }
    return 0.5 * (m + m.transpose());
}

// Symmetric PSD square root with negative eigenvalues clamped to zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    require(eig.info() == Eigen::Success, kModule, "eigendecomposition failed in matrix square root");
    const Eigen::VectorXd roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

template <class T>
double psnr(const Tensor<T>& x, const Tensor<T>& x_hat, double peak) {
    require(x.shape() == x_hat.shape(), kModule, "psnr: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(x_hat.shape()));
    require(!x.empty(), kModule, "psnr of empty images");
    long double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const long double d = static_cast<long double>(x[i]) - x_hat[i];
        s += d * d;
    }
    const double mse = static_cast<double>(s / x.size());
    if (mse < peak * peak * 1e-10) return kPsnrCap;
    return 10.0 * std::log10(peak * peak / mse);
}

template <class T>
double ssim(const Tensor<T>& x, const Tensor<T>& x_hat, double peak) {
    require(x.shape() == x_hat.shape(), kModule, "ssim: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(x_hat.shape()));
    require(x.rank() == 3 || x.rank() == 4, kModule, "ssim expects [C, H, W] or [B, C, H, W]");
    const int h = x.dim(-2), w = x.dim(-1);
    require(h >= kSsimWindow && w >= kSsimWindow, kModule,
            "image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the 7x7 SSIM window");
    const std::size_t planes = x.size() / (static_cast<std::size_t>(h) * w);
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    const double n  = kSsimWindow * kSsimWindow;
    double total    = 0;
    std::size_t windows = 0;
    for (std::size_t p = 0; p < planes; ++p) {
        const T* a = x.data() + p * h * w;
        const T* b = x_hat.data() + p * h * w;
        for (int y = 0; y + kSsimWindow <= h; ++y) {
            for (int xx = 0; xx + kSsimWindow <= w; ++xx) {
                double sa = 0, sb = 0;
                for (int dy = 0; dy < kSsimWindow; ++dy) {
                    for (int dx = 0; dx < kSsimWindow; ++dx) {
                        sa += a[(y + dy) * w + xx + dx];
                        sb += b[(y + dy) * w + xx + dx];
                    }
                }
                const double ma = sa / n, mb = sb / n;
                double vaa = 0, vbb = 0, vab = 0;
                for (int dy = 0; dy < kSsimWindow; ++dy) {
                    for (int dx = 0; dx < kSsimWindow; ++dx) {
                        const double da = a[(y + dy) * w + xx + dx] - ma;
                        const double db = b[(y + dy) * w + xx + dx] - mb;
                        vaa += da * da;
                        vbb += db * db;
                        vab += da * db;
                    }
                }
                vaa /= n;
                vbb /= n;
                vab /= n;
                total += ((2 * ma * mb + c1) * (2 * vab + c2)) / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
                ++windows;
            }
        }
    }
    return total / static_cast<double>(windows);
}

FeatureStats feature_stats(const std::vector<std::vector<double>>& rows, const std::string& extractor) {
    require(rows.size() >= 2, kModule, "feature statistics need at least 2 samples, got " + std::to_string(rows.size()));
    const std::size_t d = rows.front().size();
    for (const auto& r : rows) require(r.size() == d, kModule, "feature rows have differing dimensions");
    FeatureStats s;
    s.count     = static_cast<int>(rows.size());
    s.extractor = extractor;
    s.mean.assign(d, 0.0);
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < d; ++i) s.mean[i] += r[i];
    }
    for (auto& m : s.mean) m /= static_cast<double>(rows.size());
    s.covariance.assign(d * d, 0.0);
    std::vector<double> c(d);
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < d; ++i) c[i] = r[i] - s.mean[i];
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) s.covariance[i * d + j] += c[i] * c[j];
        }
    }
    for (auto& v : s.covariance) v /= static_cast<double>(rows.size());
    return s;
}

template <class T>
FeatureStats feature_stats(const std::vector<Tensor<T>>& images, const FeatureExtractor<T>& extractor) {
    std::vector<std::vector<double>> rows;
    for (const auto& img : images) {
        const auto batch = img.rank() == 3 ? img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)}) : img;
        const auto f     = extractor.pooled(batch);
        const int d      = f.dim(1);
        for (int b = 0; b < f.dim(0); ++b) {
            rows.emplace_back(f.begin() + static_cast<std::ptrdiff_t>(b) * d, f.begin() + static_cast<std::ptrdiff_t>(b + 1) * d);
        }
    }
    return feature_stats(rows, extractor.identity());
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
    require(a.dim() == b.dim(), kModule,
            "Frechet distance between " + std::to_string(a.dim()) + "- and " + std::to_string(b.dim()) + "-dim features");
    require(a.dim() > 0, kModule, "empty feature statistics");
    double mean_term = 0;
    for (int i = 0; i < a.dim(); ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
    const Eigen::MatrixXd sa = as_matrix(a), sb = as_matrix(b);
    const Eigen::MatrixXd root_a = psd_sqrt(sa);
    Eigen::MatrixXd inner        = root_a * sb * root_a;
    inner                        = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner, Eigen::EigenvaluesOnly);
    require(eig.info() == Eigen::Success, kModule, "eigendecomposition failed in Frechet distance");
    const double cross = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double fd    = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
    if (fd < 0) {
        require(fd > -1e-6, kModule, "Frechet distance is negative (" + std::to_string(fd) + "); matrix root failed");
        return 0.0;
    }
    return fd;
}

DensityCoverage density_coverage(const std::vector<std::vector<double>>& real, const std::vector<std::vector<double>>& fake,
                                 int k) {
    require(k >= 1, kModule, "k must be positive");
    require(static_cast<int>(real.size()) >= k + 1 && static_cast<int>(fake.size()) >= k + 1, kModule,
            "density/coverage with k=" + std::to_string(k) + " needs at least " + std::to_string(k + 1) + " points per set");
    const std::size_t n = real.size();
    // Squared radii; comparing squared distances avoids rounding in sqrt.
    std::vector<double> radius(n);
    std::vector<double> d(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t m = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) d[m++] = squared_distance(real[i], real[j]);
        }
        std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
        radius[i] = d[k - 1];
    }
    std::vector<bool> covered(n, false);
    double inside = 0;
    for (const auto& f : fake) {
        for (std::size_t i = 0; i < n; ++i) {
            if (squared_distance(f, real[i]) < radius[i]) {
                inside += 1;
                covered[i] = true;
            }
        }
    }
    DensityCoverage out;
    out.k        = k;
    out.density  = inside / (static_cast<double>(k) * static_cast<double>(fake.size()));
    out.coverage = static_cast<double>(std::count(covered.begin(), covered.end(), true)) / static_cast<double>(n);
    return out;
}

template <class T>
Tensor<T> diversity_map(const DrawFn<T>& draw, const Shape& epsilon_shape, int n_draws, std::uint64_t seed) {
    require(n_draws >= 2, kModule, "diversity map needs at least 2 draws");
    Rng rng(seed);
    std::vector<Tensor<T>> draws;
    for (int k = 0; k < n_draws; ++k) draws.push_back(draw(randn<T>(epsilon_shape, rng)));
    const Shape out_shape = draws.front().shape();
    Tensor<T> out(out_shape);
    // Deviations from the first draw, so identical draws give exactly 0.
    const auto& ref = draws.front();
    std::vector<double> mean(out.size(), 0.0);
    for (const auto& d : draws) {
        require(d.shape() == out_shape, kModule, "draws have differing shapes");
        for (std::size_t i = 0; i < d.size(); ++i) mean[i] += static_cast<double>(d[i]) - ref[i];
    }
    for (auto& m : mean) m /= n_draws;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double s = 0;
        for (const auto& d : draws) {
            const double dev = static_cast<double>(d[i]) - ref[i] - mean[i];
            s += dev * dev;
        }
        out[i] = static_cast<T>(std::sqrt(s / (n_draws - 1)));
    }
    return out;
}

template <class T>
Tensor<T> diversity_map(const Decoder<T>& decoder, const Tensor<T>& z, const SampleSchedule& schedule, int n_draws,
                        std::uint64_t seed) {
    const int f = decoder.layout().latent_factor;
    const Shape shape{z.dim(0), 3, z.dim(2) * f, z.dim(3) * f};
    return diversity_map<T>([&](const Tensor<T>& eps) { return sample(decoder, eps, z, schedule); }, shape, n_draws, seed);
}

nlohmann::json MetricReport::to_json() const {
    return {{"psnr", psnr},         {"ssim", ssim},         {"perceptual", perceptual},
            {"frechet", frechet},   {"density", density},   {"coverage", coverage},
            {"knn_k", knn_k},       {"n_images", n_images}, {"extractor", extractor},
            {"config_hash", config_hash}};
}

template <class T>
MetricReport evaluate_sets(const std::vector<Tensor<T>>& reference, const std::vector<Tensor<T>>& reconstruction,
                           const FeatureExtractor<T>& extractor, const std::string& config_hash) {
    require(reference.size() == reconstruction.size(), kModule, "reference and reconstruction counts differ");
    require(reference.size() >= 2, kModule, "evaluation needs at least 2 images");
    MetricReport r;
    r.n_images    = static_cast<int>(reference.size());
    r.extractor   = extractor.identity();
    r.config_hash = config_hash;
    std::vector<std::vector<double>> fa, fb;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        r.psnr += psnr(reference[i], reconstruction[i]);
        r.ssim += ssim(reference[i], reconstruction[i]);
        const auto& a = reference[i];
        const auto& b = reconstruction[i];
        const Shape s4{1, a.dim(0), a.dim(1), a.dim(2)};
        r.perceptual += perceptual_distance(a.reshaped(s4), b.reshaped(s4), extractor);
        const auto pa = extractor.pooled(a.reshaped(s4));
        const auto pb = extractor.pooled(b.reshaped(s4));
        fa.emplace_back(pa.begin(), pa.end());
        fb.emplace_back(pb.begin(), pb.end());
    }
    const double n = static_cast<double>(reference.size());
    r.psnr /= n;
    r.ssim /= n;
    r.perceptual /= n;
    r.frechet  = frechet_distance(feature_stats(fa, r.extractor), feature_stats(fb, r.extractor));
    const int k = std::min(5, r.n_images - 1);
    const auto dc = density_coverage(fa, fb, k);
    r.density     = dc.density;
    r.coverage    = dc.coverage;
    r.knn_k       = k;
    return r;
}

template <class T>
std::vector<SweepRow> step_sweep(const std::function<std::vector<Tensor<T>>(const SampleSchedule&)>& reconstruct,
                                 const std::vector<Tensor<T>>& reference, const std::vector<int>& n_list,
                                 const std::vector<double>& rho_list, const FeatureExtractor<T>& extractor) {
    require(!reference.empty(), kModule, "step sweep over an empty evaluation set");
    std::vector<SweepRow> rows;
    for (int n : n_list) {
        for (double rho : rho_list) {
            SweepRow row;
            row.n_steps = n;
            row.rho     = rho;
            row.report  = evaluate_sets(reference, reconstruct(make_schedule(n, rho)), extractor);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "N,rho,psnr,ssim,perceptual,frechet\n" << std::setprecision(10);
    for (const auto& r : rows) {
        os << r.n_steps << ',' << r.rho << ',' << r.report.psnr << ',' << r.report.ssim << ',' << r.report.perceptual
           << ',' << r.report.frechet << '\n';
    }
    return os.str();
}

#define SSDD_INSTANTIATE_METRICS(T)                                                                                  \
    template double psnr(const Tensor<T>&, const Tensor<T>&, double);                                                \
    template double ssim(const Tensor<T>&, const Tensor<T>&, double);                                                \
    template FeatureStats feature_stats(const std::vector<Tensor<T>>&, const FeatureExtractor<T>&);                  \
    template Tensor<T> diversity_map(const DrawFn<T>&, const Shape&, int, std::uint64_t);                            \
    template Tensor<T> diversity_map(const Decoder<T>&, const Tensor<T>&, const SampleSchedule&, int, std::uint64_t); \
    template MetricReport evaluate_sets(const std::vector<Tensor<T>>&, const std::vector<Tensor<T>>&,                \
                                        const FeatureExtractor<T>&, const std::string&);                             \
    template std::vector<SweepRow> step_sweep(                                                                       \
        const std::function<std::vector<Tensor<T>>(const SampleSchedule&)>&, const std::vector<Tensor<T>>&,          \
        const std::vector<int>&, const std::vector<double>&, const FeatureExtractor<T>&);

SSDD_INSTANTIATE_METRICS(float)
SSDD_INSTANTIATE_METRICS(double)

}  // namespace ssdd
