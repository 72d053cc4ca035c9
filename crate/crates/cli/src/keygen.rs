use std::path::PathBuf;

use clap::Args;
use hefl_ckks::{CkksContext, CkksParams, SecurityProfile};
use hefl_core::{CoreError, Result};

pub const PUBLIC_KEY_FILE: &str = "public.key";
pub const SECRET_KEY_FILE: &str = "secret.key";

#[derive(Args, Debug)]
pub struct KeygenArgs {
    /// CKKS parameter set
    #[arg(long, value_name = "PROFILE", default_value = "paper-128", value_parser = ["paper-128", "test-small"])]
    ckks_profile: String,
    /// Key generation seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for public.key and secret.key
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run(a: KeygenArgs) -> Result<()> {
    let params = SecurityProfile::from_label(&a.ckks_profile)
        .and_then(CkksParams::from_profile)
        .ok_or_else(|| CoreError::Usage(format!("unknown profile `{}`", a.ckks_profile)))?;
    let ctx = CkksContext::new(params)?;
    let (sk, pk) = ctx.keygen(a.seed);
    let dir = crate::require_dir(&a.out)?;
    crate::write_file(&dir.join(PUBLIC_KEY_FILE), &ctx.serialize_public_key(&pk))?;
    crate::write_file(&dir.join(SECRET_KEY_FILE), &ctx.serialize_secret_key(&sk))?;
    let p = ctx.params();
    println!("profile      {}", a.ckks_profile);
    println!("ring degree  {}", p.ring_dim());
    println!("fingerprint  {}", hex(&p.fingerprint()));
    println!("wrote        {}", dir.display());
    Ok(())
}
