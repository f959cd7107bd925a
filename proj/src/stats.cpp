#include "gelk/stats.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace gelk {

double student_t_sf(double t, double nu) {
    boost::math::students_t dist(nu);
    return boost::math::cdf(boost::math::complement(dist, t));
}

double chi2_sf(double x, double dof) {
    boost::math::chi_squared dist(dof);
    return boost::math::cdf(boost::math::complement(dist, x));
}

double chi2_quantile(double p, double dof) {
    boost::math::chi_squared dist(dof);
    return boost::math::quantile(dist, p);
}

}  // namespace gelk
