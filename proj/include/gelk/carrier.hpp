#pragma once

#include <string>

namespace gelk {

// The scalar carrier function rho generating the GEL criterion, normalised so
// that rho(0) = 0 and rho'(0) = rho''(0) = -1.  EL, ET and CUE are the
// classical special cases; CressieRead(gamma) is the one-parameter family
// rho(v) = -(1 + gamma v)^{(gamma+1)/gamma} / (gamma + 1), whose gamma -> 0
// and gamma -> -1 limits are ET and EL (the constructor delegates there).
class CarrierFamily {
public:
    enum class Kind { el, et, cue, cressie_read };

    static CarrierFamily EL() { return CarrierFamily(Kind::el, 0.0); }
    static CarrierFamily ET() { return CarrierFamily(Kind::et, 0.0); }
    static CarrierFamily CUE() { return CarrierFamily(Kind::cue, 0.0); }
    static CarrierFamily CressieRead(double gamma);

    Kind kind() const { return kind_; }
    double gamma() const { return gamma_; }
    std::string name() const;

    // Open domain V of rho: EL requires v < 1, CressieRead 1 + gamma v > 0,
    // ET and CUE are entire.
    bool in_domain(double v) const;

    // Distance from v to the boundary of V (+inf when V is the whole line);
    // the inner solver keeps iterates at least a small margin inside.
    double boundary_gap(double v) const;

private:
    CarrierFamily(Kind kind, double gamma) : kind_(kind), gamma_(gamma) {}

    Kind kind_;
    double gamma_;
};

// rho^(j)(v) for j in {0,..,3}; j = 0 is the normalised rho(v) - rho(0).
// Throws domain_violation when v lies outside V.
double carrier_derivative(const CarrierFamily& family, double v, int j);

// c_rho = 1 + rho'''(0) / 2, the constant scaling the second-order terms:
// 0 for EL, 1/2 for ET, 1 for CUE, (gamma + 1) / 2 for CressieRead.
double c_rho(const CarrierFamily& family);

}  // namespace gelk
