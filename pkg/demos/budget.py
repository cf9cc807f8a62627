"""Detection-efficiency budget for a 4 ps gate at 76 MHz."""
from __future__ import annotations

from upconv_g2 import analysis as A

print(A.efficiency_budget().report())

# a wider gate buys duty cycle at the cost of resolution
for res in (2.0, 4.0, 8.0):
    f = dict(A.DEFAULT_BUDGET_FACTORS, gate_duty_cycle=A.gate_duty_cycle(res))
    print(f"{res:4.1f} ps gate -> product {A.efficiency_budget(f).product:.2e}")
