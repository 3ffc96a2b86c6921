//! ITU-T G.711 companding, segment-search form of the reference
//! encoder/decoder on 16-bit linear samples.

const MU_BIAS: i32 = 0x84;
const MU_CLIP: i32 = 8159;
const MU_SEG_END: [i32; 8] = [0x3F, 0x7F, 0xFF, 0x1FF, 0x3FF, 0x7FF, 0xFFF, 0x1FFF];
const A_SEG_END: [i32; 8] = [0x1F, 0x3F, 0x7F, 0xFF, 0x1FF, 0x3FF, 0x7FF, 0xFFF];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Law {
    Mu,
    A,
}

fn segment(v: i32, table: &[i32; 8]) -> usize {
    table.iter().position(|&end| v <= end).unwrap_or(8)
}

pub fn mulaw_encode(pcm: i16) -> u8 {
    let mut v = (pcm as i32) >> 2;
    let mask = if v < 0 {
        v = -v;
        0x7F
    } else {
        0xFF
    };
    v = v.min(MU_CLIP) + (MU_BIAS >> 2);
    let seg = segment(v, &MU_SEG_END);
    let code = if seg >= 8 { 0x7F } else { ((seg as i32) << 4) | ((v >> (seg + 1)) & 0x0F) };
    (code ^ mask) as u8
}

pub fn mulaw_decode(code: u8) -> i16 {
    let u = !code;
    let t = ((((u & 0x0F) as i32) << 3) + MU_BIAS) << ((u & 0x70) >> 4);
    (if u & 0x80 != 0 { MU_BIAS - t } else { t - MU_BIAS }) as i16
}

pub fn alaw_encode(pcm: i16) -> u8 {
    let mut v = (pcm as i32) >> 3;
    let mask = if v >= 0 {
        0xD5
    } else {
        v = -v - 1;
        0x55
    };
    let seg = segment(v, &A_SEG_END);
    let code = if seg >= 8 {
        0x7F
    } else {
        let shift = if seg < 2 { 1 } else { seg };
        ((seg as i32) << 4) | ((v >> shift) & 0x0F)
    };
    (code ^ mask) as u8
}

pub fn alaw_decode(code: u8) -> i16 {
    let a = code ^ 0x55;
    let mut t = ((a & 0x0F) as i32) << 4;
    match (a & 0x70) >> 4 {
        0 => t += 8,
        1 => t += 0x108,
        seg => t = (t + 0x108) << (seg - 1),
    }
    (if a & 0x80 != 0 { t } else { -t }) as i16
}

pub fn encode(law: Law, pcm: i16) -> u8 {
    match law {
        Law::Mu => mulaw_encode(pcm),
        Law::A => alaw_encode(pcm),
    }
}

pub fn decode(law: Law, code: u8) -> i16 {
    match law {
        Law::Mu => mulaw_decode(code),
        Law::A => alaw_decode(code),
    }
}
