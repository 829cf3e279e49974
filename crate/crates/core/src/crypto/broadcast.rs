use serde::{Deserialize, Serialize};

use super::codec::{canonical_decode, canonical_encode, Canonical, CodecError, Decoder, Encoder};
use super::hash::{hash0, Digest};
use super::sign::{hex_bytes, AuthorId, PublicKey, SigningIdentity};

pub const PROTOCOL_VERSION: u16 = 1;

/// Public description of the model a broadcast commits to.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelInfo {
    /// `(inputs, outputs)` for every dense layer, input side first.
    pub arch: Vec<(u32, u32)>,
    pub round: u32,
    pub protocol_version: u16,
}

impl ModelInfo {
    pub fn new(arch: Vec<(u32, u32)>, round: u32) -> Self {
        ModelInfo {
            arch,
            round,
            protocol_version: PROTOCOL_VERSION,
        }
    }

    /// True if both describe the same network structure, whatever the round.
    pub fn same_structure(&self, other: &ModelInfo) -> bool {
        self.arch == other.arch && self.protocol_version == other.protocol_version
    }
}

impl Canonical for ModelInfo {
    fn encode(&self, enc: &mut Encoder) -> Result<(), CodecError> {
        enc.u16(self.protocol_version);
        enc.u32(self.round);
        enc.len(self.arch.len())?;
        for (i, o) in &self.arch {
            enc.u32(*i);
            enc.u32(*o);
        }
        Ok(())
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let protocol_version = dec.u16("info.protocol_version")?;
        let round = dec.u32("info.round")?;
        let n = dec.len("info.arch")?;
        let arch = (0..n)
            .map(|_| Ok((dec.u32("info.arch")?, dec.u32("info.arch")?)))
            .collect::<Result<_, CodecError>>()?;
        Ok(ModelInfo {
            arch,
            round,
            protocol_version,
        })
    }
}

/// The signed part of a broadcast.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BroadcastBody {
    pub timestamp: u64,
    pub root: Digest,
    pub info: ModelInfo,
}

impl Canonical for BroadcastBody {
    fn encode(&self, enc: &mut Encoder) -> Result<(), CodecError> {
        enc.u64(self.timestamp);
        enc.digest(&self.root);
        self.info.encode(enc)
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(BroadcastBody {
            timestamp: dec.u64("body.timestamp")?,
            root: dec.digest("body.root")?,
            info: ModelInfo::decode(dec)?,
        })
    }
}

/// A signed, timestamped Merkle root: `<time || Merkle(KEYs, VERs, info)>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Broadcast {
    pub timestamp: u64,
    pub root: Digest,
    pub info: ModelInfo,
    #[serde(with = "hex_bytes")]
    pub signature: Vec<u8>,
    pub signer: AuthorId,
}

impl Broadcast {
    pub fn sign(identity: &SigningIdentity, timestamp: u64, root: Digest, info: ModelInfo) -> Result<Self, CodecError> {
        let body = BroadcastBody { timestamp, root, info };
        let signature = identity.sign(&canonical_encode(&body)?);
        let BroadcastBody { timestamp, root, info } = body;
        Ok(Broadcast {
            timestamp,
            root,
            info,
            signature,
            signer: identity.author_id().clone(),
        })
    }

    pub fn body(&self) -> BroadcastBody {
        BroadcastBody {
            timestamp: self.timestamp,
            root: self.root,
            info: self.info.clone(),
        }
    }

    pub fn verify(&self, public_key: &PublicKey) -> bool {
        canonical_encode(&self.body()).is_ok_and(|msg| public_key.verify(&msg, &self.signature))
    }

    /// `[u64 timestamp][root][u16 len + info][u16 len + signature][u16 len + signer id]`
    pub fn to_wire(&self) -> Result<Vec<u8>, CodecError> {
        let info = canonical_encode(&self.info)?;
        let mut enc = Encoder::default();
        enc.u64(self.timestamp);
        enc.digest(&self.root);
        for field in [&info[..], &self.signature[..], self.signer.as_str().as_bytes()] {
            let n = u16::try_from(field.len())
                .map_err(|_| CodecError::NotCanonical("broadcast field exceeds u16 length"))?;
            enc.u16(n);
            enc.raw(field);
        }
        Ok(enc.finish())
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(bytes);
        let timestamp = dec.u64("broadcast.timestamp")?;
        let root = dec.digest("broadcast.root")?;
        let mut field = |what| -> Result<&[u8], CodecError> {
            let n = dec.u16(what)? as usize;
            dec.take(n, what)
        };
        let info = canonical_decode(field("broadcast.info")?)?;
        let signature = field("broadcast.signature")?.to_vec();
        let signer = String::from_utf8(field("broadcast.signer")?.to_vec()).map_err(|e| CodecError::Invalid {
            what: "broadcast.signer",
            detail: e.to_string(),
        })?;
        dec.finish()?;
        Ok(Broadcast {
            timestamp,
            root,
            info,
            signature,
            signer: AuthorId(signer),
        })
    }

    /// Identifier for logs and transcripts.
    pub fn digest(&self) -> Digest {
        hash0(&self.to_wire().expect("broadcast fields fit the wire format"))
    }
}
