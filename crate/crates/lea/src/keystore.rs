use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sparsewpir_core::he::{Bfv, SecretKey};
use sparsewpir_core::{Context, CoreError, Profile, ProfileId};

use crate::error::{LeaError, Result};

/// Profiles and their secret keys on local disk, `<id>.profile` beside `<id>.key`.
/// Secret keys never leave this directory.
#[derive(Debug)]
pub struct KeyStore {
    dir: PathBuf,
    index: BTreeMap<String, String>,
}

/// A profile ready for querying.
pub struct Session {
    pub profile: Profile,
    pub id: ProfileId,
    pub sk: SecretKey,
    pub bfv: Arc<Bfv>,
}

const INDEX: &str = "index.json";

/// Profiles are interchangeable across context versions with equal geometry.
pub fn slot(ctx: &Context, eps: usize) -> String {
    let dims: Vec<String> = ctx.dims.iter().map(usize::to_string).collect();
    format!("{}/n{}/b{}/t{}/{}/e{eps}", dims.join("x"), ctx.ring_degree, ctx.record_bytes, ctx.theta, if ctx.toy { "toy" } else { "std" })
}

impl KeyStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let index = match fs::read_to_string(dir.join(INDEX)) {
            Ok(s) => serde_json::from_str(&s).map_err(|e| LeaError::KeyStore(format!("corrupt index: {e}")))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(KeyStore { dir, index })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn load(&self, ctx: &Context, eps: usize) -> Result<Option<Session>> {
        let Some(hex) = self.index.get(&slot(ctx, eps)) else {
            return Ok(None);
        };
        let bytes = fs::read(self.dir.join(format!("{hex}.profile")))?;
        let (profile, bfv) = Profile::from_bytes(&bytes)?;
        let id = profile.id();
        if id.to_hex() != *hex {
            return Err(LeaError::KeyStore(format!("profile file {hex} hashes to {id}")));
        }
        profile.check_compatible(ctx)?;
        let sk = bfv.secret_key_from_bytes(&fs::read(self.dir.join(format!("{hex}.key")))?).map_err(CoreError::from)?;
        Ok(Some(Session { profile, id, sk, bfv }))
    }

    pub fn save(&mut self, ctx: &Context, s: &Session) -> Result<()> {
        let hex = s.id.to_hex();
        fs::write(self.dir.join(format!("{hex}.profile")), s.profile.to_bytes())?;
        write_private(&self.dir.join(format!("{hex}.key")), &s.sk.to_bytes())?;
        self.index.insert(slot(ctx, s.profile.epsilon), hex);
        let tmp = self.dir.join(format!("{INDEX}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(&self.index).expect("index serializes"))?;
        fs::rename(tmp, self.dir.join(INDEX))?;
        Ok(())
    }
}

#[cfg(unix)]
fn write_private(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    use std::io::Write;
    use std::os::unix::fs::OpenOptionsExt;
    let mut f = fs::OpenOptions::new().write(true).create(true).truncate(true).mode(0o600).open(path)?;
    f.write_all(bytes)
}

#[cfg(not(unix))]
fn write_private(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    fs::write(path, bytes)
}
