#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gridsim/error.hpp"
#include "gridsim/metrics.hpp"
#include "gridsim/workload.hpp"

namespace gridsim {

// One record per completed, failed or denied job.
struct UsageRecord {
  std::string job;
  std::string user;
  std::string vo;
  std::string status;
  double cpu_seconds = 0.0;
  double bytes_in = 0.0;
  double bytes_out = 0.0;
  double storage_byte_seconds = 0.0;
  double wall_seconds = 0.0;
  double utility = 0.0;
  std::size_t period = 0;

  ResourceUsage resources() const {
    return ResourceUsage{cpu_seconds, bytes_in + bytes_out, storage_byte_seconds};
  }
};

struct PriceSchedule {
  double cpu = 0.0;      // money per cpu-second
  double byte = 0.0;     // money per byte moved
  double storage = 0.0;  // money per byte-second held
  double utility = 0.0;  // money per unit of job utility (a QoS rebate; utility is <= 0)

  bool valid() const { return cpu >= 0.0 && byte >= 0.0 && storage >= 0.0 && utility >= 0.0; }
};

// Linear in every usage field; the utility term can only lower the bill,
// which never drops below zero.
inline double charge(const UsageRecord& u, const PriceSchedule& p) {
  const double linear = p.cpu * u.cpu_seconds + p.byte * (u.bytes_in + u.bytes_out) +
                        p.storage * u.storage_byte_seconds + p.utility * u.utility;
  return std::max(0.0, linear);
}

struct Consumption {
  double cpu_seconds = 0.0;
  double bytes = 0.0;
  double money = 0.0;

  Consumption& operator+=(const Consumption& o) {
    cpu_seconds += o.cpu_seconds;
    bytes += o.bytes;
    money += o.money;
    return *this;
  }
  Consumption& operator-=(const Consumption& o) {
    cpu_seconds -= o.cpu_seconds;
    bytes -= o.bytes;
    money -= o.money;
    return *this;
  }
};

// Subjects are "user:<name>" or "vo:<name>".
inline std::string user_subject(const std::string& u) { return "user:" + u; }
inline std::string vo_subject(const std::string& v) { return "vo:" + v; }

struct Quota {
  std::string subject;
  std::optional<double> cpu_seconds;
  std::optional<double> bytes;
  std::optional<double> money;
};

struct QuotaDecision {
  bool allowed = true;
  std::string reason;
  Consumption headroom;  // remaining after the projection; huge where uncapped
};

struct Bill {
  std::string subject;
  std::size_t period = 0;
  ResourceUsage usage;
  double wall_seconds = 0.0;
  std::size_t jobs = 0;
  double total = 0.0;
};

struct AccountingConfig {
  double period = 3600.0;
  PriceSchedule prices;
  std::vector<Quota> quotas;
};

// DGAS-style ledger: usage per job, per-period quota counters, bills.
// Usage counts against the period in which the job was admitted.
class Accounting {
 public:
  Accounting() = default;
  explicit Accounting(AccountingConfig cfg) : cfg_(std::move(cfg)) {
    if (!(cfg_.period > 0.0)) throw ConfigError("accounting period must be positive");
    for (const auto& q : cfg_.quotas) quotas_[q.subject] = q;
  }

  const AccountingConfig& config() const { return cfg_; }
  std::size_t current_period() const { return period_; }

  // Counters reset at every period boundary.
  void roll_period(std::size_t next) {
    if (next < period_) throw IntegrityError("accounting periods move forward only");
    period_ = next;
  }

  Consumption consumed(const std::string& subject) const { return consumed(subject, period_); }

  Consumption consumed(const std::string& subject, std::size_t period) const {
    auto it = counters_.find({subject, period});
    return it == counters_.end() ? Consumption{} : it->second;
  }

  // Deny iff some capped counter would exceed its cap. No quota: always allow.
  QuotaDecision check_quota(const std::string& subject, const Consumption& projected) const {
    QuotaDecision d;
    constexpr double kUnlimited = 1e300;
    d.headroom = {kUnlimited, kUnlimited, kUnlimited};
    auto it = quotas_.find(subject);
    if (it == quotas_.end()) return d;
    const auto used = consumed(subject);
    auto check = [&](const std::optional<double>& cap, double used_v, double proj, double& room,
                     const char* what) {
      if (!cap) return;
      room = *cap - used_v - proj;
      if (used_v + proj > *cap) {
        d.allowed = false;
        if (d.reason.empty()) d.reason = std::string("quota exceeded: ") + what + " for " + subject;
      }
    };
    check(it->second.cpu_seconds, used.cpu_seconds, projected.cpu_seconds, d.headroom.cpu_seconds,
          "cpu-seconds");
    check(it->second.bytes, used.bytes, projected.bytes, d.headroom.bytes, "bytes");
    check(it->second.money, used.money, projected.money, d.headroom.money, "money");
    return d;
  }

  // Admission for a job: checks the user and VO quotas and, when both pass,
  // books the projection into the current period.
  QuotaDecision admit(const JobSpec& job, const Consumption& projected) {
    for (const auto& subject : {user_subject(job.user), vo_subject(job.vo)}) {
      auto d = check_quota(subject, projected);
      if (!d.allowed) return d;
    }
    book(user_subject(job.user), period_, projected);
    book(vo_subject(job.vo), period_, projected);
    admitted_[job.id] = Admission{period_, projected, job.user, job.vo};
    return {};
  }

  Consumption project(const UsageRecord& u) const {
    return Consumption{u.cpu_seconds, u.bytes_in + u.bytes_out, charge(u, cfg_.prices)};
  }

  // Final usage for an admitted job replaces its projection.
  const UsageRecord& record_usage(UsageRecord u) {
    if (recorded_.count(u.job)) throw IntegrityError("duplicate usage record for '" + u.job + "'");
    auto it = admitted_.find(u.job);
    if (it != admitted_.end()) {
      u.period = it->second.period;
      const auto actual = project(u);
      for (const auto& s : {user_subject(it->second.user), vo_subject(it->second.vo)}) {
        auto& c = counters_[{s, it->second.period}];
        c -= it->second.projected;
        c += actual;
      }
      admitted_.erase(it);
    } else {
      u.period = period_;
    }
    recorded_.insert(u.job);
    records_.push_back(u);
    return records_.back();
  }

  const std::vector<UsageRecord>& records() const { return records_; }

  bool period_closed(std::size_t period) const {
    if (finalized_) return true;
    if (period >= period_) return false;
    for (const auto& [_, a] : admitted_)
      if (a.period == period) return false;
    return true;
  }

  // End of run: every period counts as closed.
  void finalize() { finalized_ = true; }

  std::vector<Bill> bill_report(std::size_t period) const {
    if (!period_closed(period))
      throw IntegrityError("period " + std::to_string(period) + " is still open");
    std::map<std::string, Bill> bills;
    for (const auto& r : records_) {
      if (r.period != period) continue;
      for (const auto& s : {user_subject(r.user), vo_subject(r.vo)}) {
        auto& b = bills[s];
        b.subject = s;
        b.period = period;
        b.usage.cpu_seconds += r.cpu_seconds;
        b.usage.bytes += r.bytes_in + r.bytes_out;
        b.usage.storage_byte_seconds += r.storage_byte_seconds;
        b.wall_seconds += r.wall_seconds;
        b.jobs += 1;
        b.total += charge(r, cfg_.prices);
      }
    }
    std::vector<Bill> out;
    for (auto& [_, b] : bills)
      if (b.jobs > 0) out.push_back(std::move(b));
    return out;
  }

  std::set<std::size_t> periods_with_usage() const {
    std::set<std::size_t> p;
    for (const auto& r : records_) p.insert(r.period);
    return p;
  }

 private:
  struct Admission {
    std::size_t period = 0;
    Consumption projected;
    std::string user;
    std::string vo;
  };

  void book(const std::string& subject, std::size_t period, const Consumption& c) {
    counters_[{subject, period}] += c;
  }

  AccountingConfig cfg_;
  std::map<std::string, Quota> quotas_;
  std::size_t period_ = 0;
  bool finalized_ = false;
  std::map<std::pair<std::string, std::size_t>, Consumption> counters_;
  std::map<std::string, Admission> admitted_;
  std::set<std::string> recorded_;
  std::vector<UsageRecord> records_;
};

}  // namespace gridsim
