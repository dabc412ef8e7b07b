//! The billing rule on a worked three-user example: bill splits across
//! gamma, exact budget balance, and the bill's root along a consumption
//! ray.
//!
//! Run with: cargo run -p flexbill --example billing_audit

use flexbill::billing::{bill_all, bill_root_scan, budget_balance_residual, total_cost};
use flexbill::{AllocationMatrix, BillingParams};

fn main() {
    // Three users on one slot consuming 1, 2 and 3 kWh at c = 1 $/kWh².
    let x = AllocationMatrix::from_rows(vec![vec![1.0], vec![2.0], vec![3.0]]).unwrap();

    println!("allocation: 1, 2, 3 kWh on a single slot, c = 1");
    println!("system cost: {} $", total_cost(&x, &BillingParams::new(1.0, 0.0).cost));
    println!();
    println!("{:>6} {:>10} {:>12} {:>10} {:>10}", "gamma", "share $", "flex $", "total $", "sum $");
    for gamma in [0.0, 0.5, 1.0, 2.0] {
        let p = BillingParams::new(1.0, gamma);
        let bills = bill_all(&x, &p);
        let sum: f64 = bills.iter().map(|b| b.total).sum();
        for (i, b) in bills.iter().enumerate() {
            let tail = if i == bills.len() - 1 {
                format!("{sum:>10.4}")
            } else {
                String::new()
            };
            println!(
                "{:>6} {:>10.4} {:>12.4} {:>10.4} {tail}",
                if i == 0 { format!("{gamma:.1}") } else { String::new() },
                b.share_term,
                b.flexibility_term,
                b.total,
            );
        }
        let residual = budget_balance_residual(&x, &p);
        println!("        budget residual: {residual:.3e}");
        println!();
    }

    // An off-peak user is rewarded; scanning the bill along their
    // consumption ray finds where the reward is used up.
    let idle = AllocationMatrix::from_rows(vec![vec![0.0], vec![1.0], vec![2.0]]).unwrap();
    let p = BillingParams::new(1.0, 1.0);
    let at_zero = bill_all(&idle, &p)[0].total;
    let root = bill_root_scan(0, &idle, &p, &[1.0]).unwrap();
    println!("user 1 idle among loads (1, 2): bill = {at_zero:.4} $ (a reward)");
    match root {
        Some(theta) => println!("bill crosses zero at {theta:.4} kWh along the unit ray"),
        None => println!("bill never crosses zero along the ray"),
    }
}
