#pragma once

// C^2 scalar functions on R^n with analytic gradients and Hessians. These
// serve both as test functions g : R^d -> R inside cylindrical functionals
// and as outer functions f : R^n -> R.

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace iwl {

class SmoothFn {
public:
    virtual ~SmoothFn() = default;
    virtual std::size_t dim() const = 0;
    virtual double value(std::span<const double> x) const = 0;
    virtual void gradient(std::span<const double> x, std::span<double> out) const = 0;
    /// Row-major dim x dim.
    virtual void hessian(std::span<const double> x, std::span<double> out) const = 0;
    /// Declared bound on |g|, |grad g|, |hess g|; infinity when only locally bounded.
    virtual double bound() const { return std::numeric_limits<double>::infinity(); }
    virtual std::string describe() const = 0;
};

using SmoothFnPtr = std::shared_ptr<const SmoothFn>;

/// One-dimensional C^2 profile h with h, h', h''.
struct Profile1D {
    virtual ~Profile1D() = default;
    virtual double value(double u) const = 0;
    virtual double d1(double u) const = 0;
    virtual double d2(double u) const = 0;
    virtual double bound() const { return std::numeric_limits<double>::infinity(); }
    virtual std::string describe() const = 0;
};

using ProfilePtr = std::shared_ptr<const Profile1D>;

/// c0 + c1 u + ... + c4 u^4.
class Polynomial final : public Profile1D {
public:
    explicit Polynomial(std::vector<double> coeffs) : c_(std::move(coeffs)) {
        if (c_.empty() || c_.size() > 5)
            throw std::invalid_argument("polynomial: degree must be between 0 and 4");
    }
    double value(double u) const override {
        double r = 0.0;
        for (std::size_t i = c_.size(); i-- > 0;) r = r * u + c_[i];
        return r;
    }
    double d1(double u) const override {
        double r = 0.0;
        for (std::size_t i = c_.size(); i-- > 1;) r = r * u + static_cast<double>(i) * c_[i];
        return r;
    }
    double d2(double u) const override {
        double r = 0.0;
        for (std::size_t i = c_.size(); i-- > 2;) r = r * u + static_cast<double>(i * (i - 1)) * c_[i];
        return r;
    }
    double bound() const override {
        for (std::size_t i = 1; i < c_.size(); ++i)
            if (c_[i] != 0.0) return std::numeric_limits<double>::infinity();
        return std::abs(c_[0]);
    }
    std::string describe() const override {
        std::ostringstream os;
        os << "polynomial[";
        for (std::size_t i = 0; i < c_.size(); ++i) os << (i ? "," : "") << c_[i];
        os << "]";
        return os.str();
    }
    const std::vector<double>& coeffs() const { return c_; }

private:
    std::vector<double> c_;
};

/// amp * sin(freq u + phase), or cos when `cosine` is set.
class Trig final : public Profile1D {
public:
    Trig(double amp, double freq, double phase, bool cosine)
        : a_(amp), w_(freq), p_(phase), cos_(cosine) {}
    double value(double u) const override {
        const double s = w_ * u + p_;
        return a_ * (cos_ ? std::cos(s) : std::sin(s));
    }
    double d1(double u) const override {
        const double s = w_ * u + p_;
        return a_ * w_ * (cos_ ? -std::sin(s) : std::cos(s));
    }
    double d2(double u) const override { return -w_ * w_ * value(u); }
    double bound() const override {
        return std::abs(a_) * std::max({1.0, std::abs(w_), w_ * w_});
    }
    std::string describe() const override {
        std::ostringstream os;
        os << (cos_ ? "cos" : "sin") << "(amp=" << a_ << ",freq=" << w_ << ",phase=" << p_ << ")";
        return os.str();
    }

private:
    double a_, w_, p_;
    bool cos_;
};

/// amp * exp(-(u - c)^2 / (2 w^2)).
class GaussianBump final : public Profile1D {
public:
    GaussianBump(double amp, double center, double width) : a_(amp), c_(center), w_(width) {
        if (!(width > 0.0)) throw std::invalid_argument("gaussian-bump: width must be positive");
    }
    double value(double u) const override {
        const double z = (u - c_) / w_;
        return a_ * std::exp(-0.5 * z * z);
    }
    double d1(double u) const override {
        const double z = (u - c_) / w_;
        return -a_ * z / w_ * std::exp(-0.5 * z * z);
    }
    double d2(double u) const override {
        const double z = (u - c_) / w_;
        return a_ * (z * z - 1.0) / (w_ * w_) * std::exp(-0.5 * z * z);
    }
    double bound() const override { return std::abs(a_) * std::max({1.0, 1.0 / w_, 2.0 / (w_ * w_)}); }
    std::string describe() const override {
        std::ostringstream os;
        os << "gaussian-bump(amp=" << a_ << ",center=" << c_ << ",width=" << w_ << ")";
        return os.str();
    }

private:
    double a_, c_, w_;
};

/// amp * exp(1 - 1/(1 - v^2)) for |v| < 1 with v = (u - c)/r, zero outside.
/// Smooth with compact support; normalized so the peak equals amp.
class CompactBump final : public Profile1D {
public:
    CompactBump(double amp, double center, double radius) : a_(amp), c_(center), r_(radius) {
        if (!(radius > 0.0)) throw std::invalid_argument("bump: radius must be positive");
    }
    double value(double u) const override {
        const double v = (u - c_) / r_;
        if (std::abs(v) >= 1.0) return 0.0;
        return a_ * std::exp(1.0 - 1.0 / (1.0 - v * v));
    }
    double d1(double u) const override {
        const double v = (u - c_) / r_;
        if (std::abs(v) >= 1.0) return 0.0;
        const double s = 1.0 - v * v;
        const double psi1 = -2.0 * v / (s * s);
        return value(u) * psi1 / r_;
    }
    double d2(double u) const override {
        const double v = (u - c_) / r_;
        if (std::abs(v) >= 1.0) return 0.0;
        const double s = 1.0 - v * v;
        const double psi1 = -2.0 * v / (s * s);
        const double psi2 = -2.0 / (s * s) - 8.0 * v * v / (s * s * s);
        return value(u) * (psi1 * psi1 + psi2) / (r_ * r_);
    }
    // max |h'| and |h''| of the unit profile are about 2.17 and 21.07
    double bound() const override { return std::abs(a_) * std::max({1.0, 2.2 / r_, 21.1 / (r_ * r_)}); }
    std::string describe() const override {
        std::ostringstream os;
        os << "bump(amp=" << a_ << ",center=" << c_ << ",radius=" << r_ << ")";
        return os.str();
    }

private:
    double a_, c_, r_;
};

/// g(x) = h(a . x): lifts a 1-D profile to R^n along direction a.
class Ridge final : public SmoothFn {
public:
    Ridge(ProfilePtr h, std::vector<double> direction) : h_(std::move(h)), a_(std::move(direction)) {
        if (!h_) throw std::invalid_argument("ridge: null profile");
        if (a_.empty()) throw std::invalid_argument("ridge: empty direction");
    }
    std::size_t dim() const override { return a_.size(); }
    double value(std::span<const double> x) const override { return h_->value(proj(x)); }
    void gradient(std::span<const double> x, std::span<double> out) const override {
        const double s = h_->d1(proj(x));
        for (std::size_t i = 0; i < a_.size(); ++i) out[i] = s * a_[i];
    }
    void hessian(std::span<const double> x, std::span<double> out) const override {
        const double s = h_->d2(proj(x));
        const std::size_t n = a_.size();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] = s * a_[i] * a_[j];
    }
    double bound() const override {
        double na = 0.0;
        for (double v : a_) na += v * v;
        na = std::sqrt(na);
        return h_->bound() * std::max({1.0, na, na * na});
    }
    std::string describe() const override {
        if (a_.size() == 1 && a_[0] == 1.0) return h_->describe();
        std::ostringstream os;
        os << h_->describe() << " o dir[";
        for (std::size_t i = 0; i < a_.size(); ++i) os << (i ? "," : "") << a_[i];
        os << "]";
        return os.str();
    }
    const Profile1D& profile() const { return *h_; }

private:
    double proj(std::span<const double> x) const {
        double s = 0.0;
        for (std::size_t i = 0; i < a_.size(); ++i) s += a_[i] * x[i];
        return s;
    }
    ProfilePtr h_;
    std::vector<double> a_;
};

/// f(z) = c + a.z + 1/2 z^T Q z with Q symmetric.
class Quadratic final : public SmoothFn {
public:
    Quadratic(double c, std::vector<double> a, std::vector<double> q)
        : c_(c), a_(std::move(a)), q_(std::move(q)) {
        const std::size_t n = a_.size();
        if (n == 0) throw std::invalid_argument("quadratic: empty linear part");
        if (q_.empty()) q_.assign(n * n, 0.0);
        if (q_.size() != n * n) throw std::invalid_argument("quadratic: Q must be n x n");
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < i; ++j) {
                const double s = 0.5 * (q_[i * n + j] + q_[j * n + i]);
                q_[i * n + j] = q_[j * n + i] = s;
            }
    }
    std::size_t dim() const override { return a_.size(); }
    double value(std::span<const double> z) const override {
        const std::size_t n = a_.size();
        double r = c_;
        for (std::size_t i = 0; i < n; ++i) {
            double qi = 0.0;
            for (std::size_t j = 0; j < n; ++j) qi += q_[i * n + j] * z[j];
            r += a_[i] * z[i] + 0.5 * z[i] * qi;
        }
        return r;
    }
    void gradient(std::span<const double> z, std::span<double> out) const override {
        const std::size_t n = a_.size();
        for (std::size_t i = 0; i < n; ++i) {
            double r = a_[i];
            for (std::size_t j = 0; j < n; ++j) r += q_[i * n + j] * z[j];
            out[i] = r;
        }
    }
    void hessian(std::span<const double>, std::span<double> out) const override {
        std::copy(q_.begin(), q_.end(), out.begin());
    }
    std::string describe() const override {
        std::ostringstream os;
        os << "quadratic(c=" << c_ << ",a=[";
        for (std::size_t i = 0; i < a_.size(); ++i) os << (i ? "," : "") << a_[i];
        os << "],Q=[";
        for (std::size_t i = 0; i < q_.size(); ++i) os << (i ? "," : "") << q_[i];
        os << "])";
        return os.str();
    }

private:
    double c_;
    std::vector<double> a_, q_;
};

/// Restricts f : R^n -> R to the coordinates [offset, offset + n) of R^D.
class BlockFn final : public SmoothFn {
public:
    BlockFn(SmoothFnPtr f, std::size_t offset, std::size_t total)
        : f_(std::move(f)), off_(offset), total_(total) {
        if (off_ + f_->dim() > total_) throw std::invalid_argument("block: out of range");
    }
    std::size_t dim() const override { return total_; }
    double value(std::span<const double> z) const override { return f_->value(z.subspan(off_, f_->dim())); }
    void gradient(std::span<const double> z, std::span<double> out) const override {
        std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(total_), 0.0);
        f_->gradient(z.subspan(off_, f_->dim()), out.subspan(off_, f_->dim()));
    }
    void hessian(std::span<const double> z, std::span<double> out) const override {
        const std::size_t n = f_->dim();
        std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(total_ * total_), 0.0);
        std::vector<double> h(n * n);
        f_->hessian(z.subspan(off_, n), h);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) out[(off_ + i) * total_ + off_ + j] = h[i * n + j];
    }
    std::string describe() const override { return f_->describe(); }

private:
    SmoothFnPtr f_;
    std::size_t off_, total_;
};

// Convenience constructors.

inline SmoothFnPtr ridge(ProfilePtr h, std::vector<double> direction = {1.0}) {
    return std::make_shared<Ridge>(std::move(h), std::move(direction));
}
inline SmoothFnPtr polynomial(std::vector<double> coeffs, std::vector<double> direction = {1.0}) {
    return ridge(std::make_shared<Polynomial>(std::move(coeffs)), std::move(direction));
}
inline SmoothFnPtr identity_fn() { return polynomial({0.0, 1.0}); }
inline SmoothFnPtr square_fn() { return polynomial({0.0, 0.0, 1.0}); }
inline SmoothFnPtr affine(double c, std::vector<double> a) {
    return std::make_shared<Quadratic>(c, std::move(a), std::vector<double>{});
}
inline SmoothFnPtr quadratic(double c, std::vector<double> a, std::vector<double> q) {
    return std::make_shared<Quadratic>(c, std::move(a), std::move(q));
}

}  // namespace iwl
