use super::db::{db_hash, DomainDb};
use super::suite::Task;
use super::{Speaker, TranscriptEntry};

/// Terminal reward: 1 iff the mutable collections hash to the gold digest
/// and every required fragment occurs, case-insensitively, in what the
/// agent said. Tool payloads and user text are not searched.
pub fn compute_reward(final_db: &DomainDb, transcript: &[TranscriptEntry], task: &Task) -> u8 {
    if db_hash(final_db, true) != task.gold_db_digest {
        return 0;
    }
    let said = transcript
        .iter()
        .filter(|e| e.speaker == Speaker::Agent)
        .map(|e| e.text.to_lowercase())
        .collect::<Vec<_>>()
        .join("\n");
    let all_present = task
        .required_outputs
        .iter()
        .all(|fragment| said.contains(&fragment.to_lowercase()));
    u8::from(all_present)
}
