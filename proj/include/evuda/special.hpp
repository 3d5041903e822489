#pragma once

namespace evuda {

// Log-gamma, digamma and trigamma for positive real arguments. All three use
// upward recurrence into the asymptotic region followed by a Stirling-type
// series. Non-positive arguments raise DomainError.
double lgamma(double x);
double digamma(double x);
double trigamma(double x);

}  // namespace evuda
