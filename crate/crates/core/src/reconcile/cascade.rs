//! Back-propagating cascade.
//!
//! Pass 1 splits the natural order into Hamming blocks of length `2^r - 1`
//! (a shorter tail block gets a parity bit). Each later pass permutes the
//! positions with public randomness, doubles the block length and compares
//! block parities. A parity mismatch is resolved by binary search; every
//! flip re-opens the blocks containing that position in all passes built so
//! far, and the lowest mismatched pass is always resolved first.
//!
//! Requests travel in batches terminated by `ACK`; the leader answers a batch
//! in order and closes it with its own `ACK`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::hamming::{block_len, hamming_correct, hamming_syndrome};
use super::wire::{Link, Message, MsgType, Transport};
use super::{BitStream, PublicSeed, ReconcileError, ReconciliationLedger, Role};

pub const DEFAULT_MAX_PASSES: u32 = 6;

/// Hamming order for the first pass given an estimated bit disagreement rate.
pub fn hamming_r_for(bdr_estimate: f64) -> u32 {
    if bdr_estimate > 0.15 {
        3
    } else if bdr_estimate >= 0.05 {
        4
    } else {
        5
    }
}

struct Pass {
    order: Vec<u32>,
    block_of: Vec<u32>,
    block_len: usize,
    /// Number of leading blocks covered by Hamming syndromes.
    hamming_blocks: usize,
}

impl Pass {
    fn natural(n: usize, r: u32) -> Pass {
        let len = block_len(r);
        Pass::from_order((0..n as u32).collect(), len, n / len)
    }

    fn permuted(n: usize, first_len: usize, index: u32, seed: &PublicSeed) -> Pass {
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.shuffle(&mut seed.rng("cascade-pass", index as u64));
        let len = (first_len << (index - 1)).clamp(1, n.max(1));
        Pass::from_order(order, len, 0)
    }

    fn from_order(order: Vec<u32>, block_len: usize, hamming_blocks: usize) -> Pass {
        let mut block_of = vec![0u32; order.len()];
        for (i, &p) in order.iter().enumerate() {
            block_of[p as usize] = (i / block_len) as u32;
        }
        Pass { order, block_of, block_len, hamming_blocks }
    }

    fn block_count(&self) -> usize {
        self.order.len().div_ceil(self.block_len)
    }

    fn block(&self, b: usize) -> &[u32] {
        let start = b * self.block_len;
        &self.order[start..(start + self.block_len).min(self.order.len())]
    }
}

fn parity(bits: &[u8], positions: &[u32]) -> u8 {
    positions.iter().fold(0, |acc, &p| acc ^ bits[p as usize])
}

/// Follows the recorded search path and returns the half whose parity is
/// asked for next.
fn search_range(len: usize, path: &[u8]) -> (usize, usize) {
    let (mut lo, mut hi) = (0, len);
    for &bit in path {
        let mid = lo + (hi - lo) / 2;
        if bit == 0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo, lo + (hi - lo) / 2)
}

fn desync(msg: &Message, why: &str) -> ReconcileError {
    ReconcileError::ProtocolDesync(format!("{why}: {msg}"))
}

/// Runs one side of the reconciliation. Both parties must pass the same
/// public seed, estimate and pass limit.
pub fn cascade_reconcile<T: Transport>(
    local: BitStream,
    role: Role,
    link: &mut Link<T>,
    seed: &PublicSeed,
    initial_bdr_estimate: f64,
    max_passes: u32,
) -> Result<(BitStream, ReconciliationLedger), ReconcileError> {
    if max_passes == 0 {
        return Err(ReconcileError::InvalidParameter("max_passes must be at least 1".into()));
    }
    if link.role() != role {
        return Err(ReconcileError::InvalidParameter("link role differs from requested role".into()));
    }
    let r = hamming_r_for(initial_bdr_estimate);
    let mut ledger = ReconciliationLedger { hamming_r: r, ..Default::default() };
    let mut stream = local;
    let (bits, marked) = match role {
        Role::Leader => lead(stream.bits.clone(), link, seed, r, max_passes, &mut ledger)?,
        Role::Follower => {
            let mut f = Follower::new(stream.bits.clone(), seed, r, max_passes);
            let marked = f.run(link)?;
            ledger.passes = f.passes.len() as u32;
            ledger.leaked_bits = f.leaked;
            ledger.corrected_positions =
                (0..stream.len()).filter(|&i| f.bits[i] != stream.bits[i]).collect();
            (f.bits, marked)
        }
    };
    let mut removed = Vec::new();
    for (pass, positions) in &marked {
        ledger.discarded_blocks.push(*pass);
        removed.extend(positions.iter().map(|&p| p as usize));
    }
    removed.sort_unstable();
    removed.dedup();
    ledger.discarded_bits = removed.len();
    stream.bits = bits;
    stream.remove_positions(&removed);
    stream.leaked_bits += ledger.leaked_bits;
    ledger.leaked_bits = stream.leaked_bits;
    Ok((stream, ledger))
}

type Marked = Vec<((u32, u64), Vec<u32>)>;

fn lead<T: Transport>(
    bits: Vec<u8>,
    link: &mut Link<T>,
    seed: &PublicSeed,
    r: u32,
    max_passes: u32,
    ledger: &mut ReconciliationLedger,
) -> Result<(Vec<u8>, Marked), ReconcileError> {
    let n = bits.len();
    let mut passes = vec![Pass::natural(n, r)];
    let first_len = block_len(r);
    let mut marked = Vec::new();
    let mut leaked = 0u64;
    loop {
        let mut batch = Vec::new();
        loop {
            let m = link.recv()?;
            let end = matches!(m.kind, MsgType::Ack | MsgType::Done);
            batch.push(m);
            if end {
                break;
            }
        }
        for m in batch {
            let p = m.pass as usize;
            if m.kind != MsgType::Ack && m.kind != MsgType::Done {
                if p == 0 || m.pass > max_passes {
                    return Err(desync(&m, "pass out of range"));
                }
                while passes.len() < p {
                    let idx = passes.len() as u32 + 1;
                    passes.push(Pass::permuted(n, first_len, idx, seed));
                }
                ledger.passes = ledger.passes.max(m.pass);
                if m.block as usize >= passes[p - 1].block_count() {
                    return Err(desync(&m, "block out of range"));
                }
            }
            match m.kind {
                MsgType::Syn => {
                    let pass = &passes[0];
                    let b = m.block as usize;
                    if p != 1 || b >= pass.hamming_blocks {
                        return Err(desync(&m, "syndrome request outside Hamming blocks"));
                    }
                    let block: Vec<u8> = pass.block(b).iter().map(|&i| bits[i as usize]).collect();
                    let syn = hamming_syndrome(&block, r)?;
                    leaked += syn.len() as u64;
                    link.send(MsgType::Syn, m.pass, m.block, syn)?;
                }
                MsgType::Par => {
                    let par = parity(&bits, passes[p - 1].block(m.block as usize));
                    leaked += 1;
                    link.send(MsgType::Par, m.pass, m.block, vec![par])?;
                }
                MsgType::Bsp => {
                    let block = passes[p - 1].block(m.block as usize);
                    let (lo, mid) = search_range(block.len(), &m.payload);
                    if mid <= lo {
                        return Err(desync(&m, "search path too long"));
                    }
                    leaked += 1;
                    link.send(MsgType::Bsp, m.pass, m.block, vec![parity(&bits, &block[lo..mid])])?;
                }
                MsgType::Mrk => {
                    marked.push(((m.pass, m.block), passes[p - 1].block(m.block as usize).to_vec()));
                }
                MsgType::Ack => link.send(MsgType::Ack, 0, 0, vec![])?,
                MsgType::Done => {
                    link.send(MsgType::Done, 0, 0, vec![])?;
                    link.flush()?;
                    ledger.leaked_bits = leaked;
                    return Ok((bits, marked));
                }
                MsgType::Nonce => return Err(desync(&m, "unexpected message")),
            }
        }
        link.flush()?;
    }
}

struct Follower<'s> {
    bits: Vec<u8>,
    seed: &'s PublicSeed,
    r: u32,
    max_passes: u32,
    passes: Vec<Pass>,
    local_par: Vec<Vec<u8>>,
    remote_par: Vec<Vec<Option<u8>>>,
    mismatched: Vec<BTreeSet<usize>>,
    /// Blocks touched by a flip whose leader parity is not yet known.
    pending: BTreeSet<(usize, usize)>,
    leaked: u64,
}

impl<'s> Follower<'s> {
    fn new(bits: Vec<u8>, seed: &'s PublicSeed, r: u32, max_passes: u32) -> Self {
        Follower {
            bits,
            seed,
            r,
            max_passes,
            passes: Vec::new(),
            local_par: Vec::new(),
            remote_par: Vec::new(),
            mismatched: Vec::new(),
            pending: BTreeSet::new(),
            leaked: 0,
        }
    }

    fn run<T: Transport>(&mut self, link: &mut Link<T>) -> Result<Marked, ReconcileError> {
        let n = self.bits.len();
        self.first_pass(link)?;
        self.settle(link)?;
        for k in 2..=self.max_passes {
            if n < 2 {
                break;
            }
            let pass = Pass::permuted(n, block_len(self.r), k, self.seed);
            self.add_pass(pass);
            let q = self.passes.len() - 1;
            let blocks: Vec<(usize, usize)> = (0..self.passes[q].block_count()).map(|b| (q, b)).collect();
            self.request_parities(link, &blocks)?;
            self.settle(link)?;
        }

        let mut marked = Vec::new();
        for (q, set) in self.mismatched.iter().enumerate() {
            for &b in set {
                link.send(MsgType::Mrk, q as u32 + 1, b as u64, vec![])?;
                marked.push(((q as u32 + 1, b as u64), self.passes[q].block(b).to_vec()));
            }
        }
        link.send(MsgType::Done, 0, 0, vec![])?;
        link.flush()?;
        link.expect(MsgType::Done, 0, 0)?;
        Ok(marked)
    }

    fn first_pass<T: Transport>(&mut self, link: &mut Link<T>) -> Result<(), ReconcileError> {
        let n = self.bits.len();
        let pass = Pass::natural(n, self.r);
        let len = pass.block_len;
        let full = pass.hamming_blocks;
        let tail = n > full * len;
        for b in 0..full {
            link.send(MsgType::Syn, 1, b as u64, vec![])?;
        }
        if tail {
            link.send(MsgType::Par, 1, full as u64, vec![])?;
        }
        link.send(MsgType::Ack, 0, 0, vec![])?;
        link.flush()?;
        for b in 0..full {
            let m = link.expect(MsgType::Syn, 1, b as u64)?;
            if m.payload.len() != self.r as usize {
                return Err(desync(&m, "syndrome length"));
            }
            self.leaked += self.r as u64;
            let block = &mut self.bits[b * len..(b + 1) * len];
            let local = hamming_syndrome(block, self.r)?;
            hamming_correct(block, &local, &m.payload);
        }
        let tail_parity = if tail { Some(self.expect_bit(link, MsgType::Par, 1, full)?) } else { None };
        link.expect(MsgType::Ack, 0, 0)?;

        self.add_pass(pass);
        if let Some(bit) = tail_parity {
            self.set_remote(0, full, bit);
        }
        Ok(())
    }

    fn add_pass(&mut self, pass: Pass) {
        let count = pass.block_count();
        let local = (0..count).map(|b| parity(&self.bits, pass.block(b))).collect();
        self.passes.push(pass);
        self.local_par.push(local);
        self.remote_par.push(vec![None; count]);
        self.mismatched.push(BTreeSet::new());
    }

    fn set_remote(&mut self, q: usize, b: usize, bit: u8) {
        self.remote_par[q][b] = Some(bit);
        self.refresh(q, b);
    }

    fn refresh(&mut self, q: usize, b: usize) {
        match self.remote_par[q][b] {
            Some(bit) if bit != self.local_par[q][b] => {
                self.mismatched[q].insert(b);
            }
            Some(_) => {
                self.mismatched[q].remove(&b);
            }
            None => {
                self.pending.insert((q, b));
            }
        }
    }

    fn flip(&mut self, p: usize) {
        self.bits[p] ^= 1;
        for q in 0..self.passes.len() {
            let b = self.passes[q].block_of[p] as usize;
            self.local_par[q][b] ^= 1;
            self.refresh(q, b);
        }
    }

    fn expect_bit<T: Transport>(
        &mut self,
        link: &mut Link<T>,
        kind: MsgType,
        pass: u32,
        block: usize,
    ) -> Result<u8, ReconcileError> {
        let m = link.expect(kind, pass, block as u64)?;
        if m.payload.len() != 1 {
            return Err(desync(&m, "expected one bit"));
        }
        self.leaked += 1;
        Ok(m.payload[0])
    }

    fn request_parities<T: Transport>(
        &mut self,
        link: &mut Link<T>,
        blocks: &[(usize, usize)],
    ) -> Result<(), ReconcileError> {
        for &(q, b) in blocks {
            link.send(MsgType::Par, q as u32 + 1, b as u64, vec![])?;
        }
        link.send(MsgType::Ack, 0, 0, vec![])?;
        link.flush()?;
        for &(q, b) in blocks {
            let bit = self.expect_bit(link, MsgType::Par, q as u32 + 1, b)?;
            self.set_remote(q, b, bit);
        }
        link.expect(MsgType::Ack, 0, 0)?;
        Ok(())
    }

    /// Resolves mismatches until every block with a known leader parity
    /// agrees. Each wave removes at least one error, so the number of waves
    /// is bounded by the stream length.
    fn settle<T: Transport>(&mut self, link: &mut Link<T>) -> Result<(), ReconcileError> {
        let mut waves = 0usize;
        loop {
            if !self.pending.is_empty() {
                let blocks: Vec<_> = std::mem::take(&mut self.pending).into_iter().collect();
                self.request_parities(link, &blocks)?;
                continue;
            }
            let Some(q) = self.mismatched.iter().position(|s| !s.is_empty()) else {
                return Ok(());
            };
            if waves > self.bits.len() {
                return Ok(());
            }
            waves += 1;
            let blocks: Vec<usize> = self.mismatched[q].iter().copied().collect();
            let flips = self.bisect(link, q, &blocks)?;
            for p in flips {
                self.flip(p);
            }
        }
    }

    /// Binary search in all given blocks of pass `q` at once.
    fn bisect<T: Transport>(
        &mut self,
        link: &mut Link<T>,
        q: usize,
        blocks: &[usize],
    ) -> Result<Vec<usize>, ReconcileError> {
        let wire_pass = q as u32 + 1;
        let mut searches: Vec<(usize, usize, usize, Vec<u8>)> =
            blocks.iter().map(|&b| (b, 0, self.passes[q].block(b).len(), Vec::new())).collect();
        loop {
            let live: Vec<usize> = (0..searches.len()).filter(|&i| searches[i].2 - searches[i].1 > 1).collect();
            if live.is_empty() {
                break;
            }
            for &i in &live {
                link.send(MsgType::Bsp, wire_pass, searches[i].0 as u64, searches[i].3.clone())?;
            }
            link.send(MsgType::Ack, 0, 0, vec![])?;
            link.flush()?;
            for &i in &live {
                let b = searches[i].0;
                let remote = self.expect_bit(link, MsgType::Bsp, wire_pass, b)?;
                let s = &mut searches[i];
                let mid = s.1 + (s.2 - s.1) / 2;
                let local = parity(&self.bits, &self.passes[q].block(b)[s.1..mid]);
                if local != remote {
                    s.2 = mid;
                    s.3.push(0);
                } else {
                    s.1 = mid;
                    s.3.push(1);
                }
            }
            link.expect(MsgType::Ack, 0, 0)?;
        }
        Ok(searches
            .iter()
            .map(|&(b, lo, _, _)| self.passes[q].block(b)[lo] as usize)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconcile::channel_pair;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::thread;
    use std::time::Duration;

    fn run_pair(
        leader: Vec<u8>,
        follower: Vec<u8>,
        bdr: f64,
        max_passes: u32,
    ) -> ((BitStream, ReconciliationLedger, u64), (BitStream, ReconciliationLedger, u64)) {
        let (ta, tb) = channel_pair(Duration::from_secs(10));
        let seed = PublicSeed::from_nonce(b"cascade-test");
        let h = thread::spawn(move || {
            let mut link = Link::new(ta, Role::Leader);
            let (s, l) =
                cascade_reconcile(BitStream::new(leader), Role::Leader, &mut link, &seed, bdr, max_passes).unwrap();
            (s, l, link.audited_bits())
        });
        let mut link = Link::new(tb, Role::Follower);
        let (s, l) =
            cascade_reconcile(BitStream::new(follower), Role::Follower, &mut link, &seed, bdr, max_passes).unwrap();
        let f = (s, l, link.audited_bits());
        (h.join().unwrap(), f)
    }

    fn noisy(n: usize, rate: f64, seed: u64) -> (Vec<u8>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let b = a.iter().map(|&x| x ^ (rng.random::<f64>() < rate) as u8).collect();
        (a, b)
    }

    #[test]
    fn r_schedule() {
        assert_eq!(hamming_r_for(0.316), 3);
        assert_eq!(hamming_r_for(0.15), 4);
        assert_eq!(hamming_r_for(0.093), 4);
        assert_eq!(hamming_r_for(0.05), 4);
        assert_eq!(hamming_r_for(0.01), 5);
    }

    #[test]
    fn search_range_follows_path() {
        assert_eq!(search_range(7, &[]), (0, 3));
        assert_eq!(search_range(7, &[1]), (3, 5));
        assert_eq!(search_range(7, &[1, 0]), (3, 4));
        assert_eq!(search_range(7, &[0, 1]), (1, 2));
    }

    #[test]
    fn seven_bits_one_error_one_pass() {
        let a = vec![1, 0, 1, 1, 0, 0, 1];
        let mut b = a.clone();
        b[4] ^= 1;
        let ((sa, la, _), (sb, lb, _)) = run_pair(a.clone(), b, 0.2, 1);
        assert_eq!(sa.bits(), &a[..]);
        assert_eq!(sb.bits(), &a[..]);
        assert_eq!(la.leaked_bits, 3);
        assert_eq!(lb.leaked_bits, 3);
        assert_eq!(lb.corrected_positions, vec![4]);
    }

    #[test]
    fn identical_inputs_leak_only_block_checks() {
        let (a, _) = noisy(1000, 0.0, 3);
        let ((sa, la, _), (sb, lb, _)) = run_pair(a.clone(), a.clone(), 0.02, 3);
        assert_eq!(sa, sb);
        assert!(lb.corrected_positions.is_empty());
        // r=5: 32 syndromes of 5 bits, one tail parity, then one parity per block
        assert_eq!(la.leaked_bits, 32 * 5 + 1 + 1000usize.div_ceil(62) as u64 + 1000usize.div_ceil(124) as u64);
        assert_eq!(la.leaked_bits, lb.leaked_bits);
    }

    #[test]
    fn corrects_noisy_streams_and_audit_matches() {
        for (rate, seed) in [(0.03, 1u64), (0.1, 2), (0.2, 3), (0.316, 4)] {
            let (a, b) = noisy(4000, rate, seed);
            let ((sa, la, audit_a), (sb, lb, audit_b)) = run_pair(a, b, rate, DEFAULT_MAX_PASSES);
            assert_eq!(sa.bits(), sb.bits(), "rate {rate}");
            assert_eq!(la.leaked_bits, lb.leaked_bits);
            assert_eq!(la.leaked_bits, audit_a);
            assert_eq!(lb.leaked_bits, audit_b);
            assert!(sa.len() > 3000);
        }
    }

    #[test]
    fn roles_swapped_agree_on_identical_inputs() {
        let (a, _) = noisy(500, 0.0, 9);
        let ((s1, _, _), (s2, _, _)) = run_pair(a.clone(), a.clone(), 0.1, 4);
        assert_eq!(s1.bits(), &a[..]);
        assert_eq!(s2.bits(), &a[..]);
    }

    #[test]
    fn empty_and_tiny_streams() {
        let ((sa, _, _), (sb, _, _)) = run_pair(vec![], vec![], 0.1, 4);
        assert!(sa.is_empty() && sb.is_empty());
        let ((sa, _, _), (sb, _, _)) = run_pair(vec![1], vec![0], 0.1, 4);
        assert_eq!(sa.bits(), sb.bits());
    }
}
