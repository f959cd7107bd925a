#include "gelk/carrier.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "gelk/errors.hpp"

namespace gelk {

CarrierFamily CarrierFamily::CressieRead(double gamma) {
    // The family is continuous in gamma but the closed form degenerates at
    // gamma = -1 (EL) and gamma = 0 (ET); delegate to the stable limits.
    if (std::abs(gamma + 1.0) < 1e-8) return EL();
    if (std::abs(gamma) < 1e-8) return ET();
    return CarrierFamily(Kind::cressie_read, gamma);
}

std::string CarrierFamily::name() const {
    switch (kind_) {
        case Kind::el: return "el";
        case Kind::et: return "et";
        case Kind::cue: return "cue";
        case Kind::cressie_read: return "cr:" + std::to_string(gamma_);
    }
    return "?";
}

bool CarrierFamily::in_domain(double v) const {
    switch (kind_) {
        case Kind::el: return v < 1.0;
        case Kind::et:
        case Kind::cue: return std::isfinite(v);
        case Kind::cressie_read: return 1.0 + gamma_ * v > 0.0;
    }
    return false;
}

double CarrierFamily::boundary_gap(double v) const {
    switch (kind_) {
        case Kind::el: return 1.0 - v;
        case Kind::et:
        case Kind::cue: return std::numeric_limits<double>::infinity();
        case Kind::cressie_read: return (1.0 + gamma_ * v) / std::abs(gamma_);
    }
    return 0.0;
}

double carrier_derivative(const CarrierFamily& family, double v, int j) {
    if (j < 0 || j > 3) throw std::invalid_argument("carrier_derivative: j must be in 0..3");
    if (!family.in_domain(v))
        throw domain_violation("carrier_derivative: v = " + std::to_string(v) +
                               " outside the domain of " + family.name());
    switch (family.kind()) {
        case CarrierFamily::Kind::el: {
            const double w = 1.0 / (1.0 - v);
            switch (j) {
                case 0: return std::log1p(-v);
                case 1: return -w;
                case 2: return -w * w;
                default: return -2.0 * w * w * w;
            }
        }
        case CarrierFamily::Kind::et:
            return j == 0 ? -std::expm1(v) : -std::exp(v);
        case CarrierFamily::Kind::cue:
            switch (j) {
                case 0: return -v - 0.5 * v * v;
                case 1: return -1.0 - v;
                case 2: return -1.0;
                default: return 0.0;
            }
        case CarrierFamily::Kind::cressie_read: {
            const double g = family.gamma();
            const double t = 1.0 + g * v;
            switch (j) {
                case 0: return (1.0 - std::pow(t, (g + 1.0) / g)) / (g + 1.0);
                case 1: return -std::pow(t, 1.0 / g);
                case 2: return -std::pow(t, 1.0 / g - 1.0);
                default: return -(1.0 - g) * std::pow(t, 1.0 / g - 2.0);
            }
        }
    }
    return 0.0;
}

double c_rho(const CarrierFamily& family) {
    return 1.0 + 0.5 * carrier_derivative(family, 0.0, 3);
}

}  // namespace gelk
