#pragma once

#include "nudgex/error.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <thread>

namespace nudgex {

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{8000};
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline Sleeper thread_sleeper() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

/// Calls `fn` until it returns without a TransportError or the policy's
/// attempts run out, sleeping initial_backoff * multiplier^k between calls.
/// Other exceptions propagate immediately. `attempts` receives the number of
/// calls made.
template <class Fn>
auto with_retry(const RetryPolicy& policy, Fn&& fn, const Sleeper& sleep, int* attempts = nullptr) {
  const int max_attempts = std::max(1, policy.max_attempts);
  auto delay = policy.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    if (attempts) *attempts = attempt;
    try {
      return fn();
    } catch (const TransportError& e) {
      if (attempt >= max_attempts) {
        throw TransportError(e.detail(), attempt, e.status(), e.retry_after_seconds());
      }
    }
    if (sleep && delay.count() > 0) sleep(delay);
    delay = std::min(policy.max_backoff,
                     std::chrono::milliseconds(static_cast<long long>(static_cast<double>(delay.count()) * policy.multiplier)));
  }
}

}  // namespace nudgex
