#pragma once

#include "dvcg/env.hpp"

#include <array>
#include <cstddef>
#include <deque>
#include <iosfwd>
#include <vector>

namespace dvcg {

/// Per-VSP (utility, gross profit) pair published one round late.
struct FinancialReport
{
  int                 round = -1;  // round the report describes; -1 when absent
  std::vector<double> utilities;
  std::vector<double> gross_profits;

  bool empty() const { return round < 0; }
};

/// Discrete action of one agent: level index per resource head.
using ActionIndex = std::array<int, kResources>;

/// One auction round in the public ledger. Never mutated after append.
struct BillRecord
{
  int                      round         = 0;
  int                      episode       = 0;
  bool                     episode_start = false;
  bool                     warmup        = false;
  Eigen::Matrix3Xd         observation;  // allocation of the previous round
  std::vector<ActionIndex> actions;
  Eigen::Matrix3Xd         allocation;  // perturbed allocation actually served
  std::vector<double>      bids;
  std::vector<double>      loans;
  std::vector<double>      estimated_utilities;
  std::vector<double>      impacts;
  std::vector<double>      interests;
  std::vector<double>      taxes;
  double                   pool    = 0.0;
  double                   sw_star = 0.0;
  FinancialReport          report;  // covers round - 1

  int num_vsps() const { return static_cast<int>(bids.size()); }
};

/// Historical welfare maxima read from the financial reports in a bill.
struct BillStats
{
  double              welfare_max = 0.0;  // max over reports of sum_j U_j
  std::vector<double> others_max;         // per i: max over reports of sum_{j != i} U_j
  std::size_t         reports     = 0;
};

/// Append-only ledger with FIFO eviction; doubles as the learners' replay buffer.
class Bill
{
public:
  explicit Bill(std::size_t capacity = 10000, double utility_floor = 0.1);

  void append(BillRecord record);

  std::size_t       size() const { return records_.size(); }
  std::size_t       capacity() const { return capacity_; }
  std::size_t       appended() const { return appended_; }
  bool              empty() const { return records_.empty(); }
  BillRecord const &at(std::size_t i) const { return records_.at(i); }
  BillRecord const &back() const { return records_.back(); }

  std::deque<BillRecord> const &records() const { return records_; }

  /// Throws ColdStartError when no record carries a financial report.
  BillStats stats() const;

  /// Matches estimate_alpha() at this bill's floor (to rounding), maintained incrementally.
  /// Throws ColdStartError when no report qualifies.
  double alpha_estimate(int vsp) const;

  double utility_floor() const { return utility_floor_; }

  /// True if records i and i+1 form a learning transition within one episode.
  bool has_transition(std::size_t i) const;

private:
  struct WindowMax
  {
    std::deque<std::pair<std::size_t, double>> entries;  // (sequence, value), values decreasing

    void   push(std::size_t seq, double value);
    void   evict_before(std::size_t seq);
    double top() const { return entries.front().second; }
  };

  struct RatioSum
  {
    double      sum   = 0.0;
    std::size_t count = 0;
  };

  void track(BillRecord const &record, std::size_t seq);
  void untrack(BillRecord const &record);

  std::size_t            capacity_;
  double                 utility_floor_;
  std::size_t            appended_ = 0;
  std::size_t            reports_  = 0;
  std::deque<BillRecord> records_;
  WindowMax              welfare_max_;
  std::vector<WindowMax> others_max_;
  std::vector<RatioSum>  ratios_;
};

/// One JSON object per line; see docs/formats.md for the field order.
void write_record(std::ostream &out, BillRecord const &record);
BillRecord read_record(std::string const &line);

}  // namespace dvcg
